#include "stablept/grad_check.hpp"

#include <cmath>
#include <vector>

namespace stablept {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<const std::pair<std::string, Tensor>> params, double h) {
    if (h <= 0.0) throw ContractError("grad_check: h must be positive");
    {
        NoTapeScope no_tape;
        const double v0 = f().value();
        const double v1 = f().value();
        if (!(v0 == v1)) throw ContractError("grad_check: f is not deterministic");
    }

    for (const auto& [name, p] : params) {
        (void)name;
        Tensor handle = p;
        handle.zero_grad();
    }
    std::vector<Eigen::ArrayXd> analytic;
    {
        Tape tape;
        Tensor loss = f();
        // a loss that never touched the tape is a constant; gradients stay zero
        if (loss.impl()->tape_id == tape.id() && loss.impl()->tape_node >= 0) {
            tape.backward(loss);
        }
    }
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        (void)name;
        analytic.push_back(p.grad());
    }

    GradCheckReport report;
    NoTapeScope no_tape;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        for (Index i = 0; i < p.numel(); ++i) {
            const double saved = p.values()[i];
            p.values()[i] = saved + h;
            const double up = f().value();
            p.values()[i] = saved - h;
            const double down = f().value();
            p.values()[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = params[pi].first;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace stablept

#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>

#include "stablept/tensor.hpp"

namespace stablept {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Compares the tape's gradients of f() against central finite differences
// (f(p+h) - f(p-h)) / 2h for every entry of every parameter. The relative
// error denominator is max(|analytic|, |numeric|, 1e-8). f must return a
// scalar tensor and be deterministic; it is re-evaluated under perturbed
// parameter values, so it must read the parameter tensors passed here.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::span<const std::pair<std::string, Tensor>> params, double h = 1e-5);

}  // namespace stablept

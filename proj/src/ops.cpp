#include "stablept/ops.hpp"

#include <cmath>

namespace stablept {

namespace {

using detail::TensorData;
using DataPtr = std::shared_ptr<TensorData>;

bool want_tape(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

Index slot_or_skip(Tape& tape, const Tensor& t) {
    return t.requires_grad() ? tape.slot_of(t) : -1;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor c(a.shape(), a.values() + b.values());
    if (want_tape({&a, &b})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sb = slot_or_skip(tape, b);
        const Index sc = tape.slot_of(c);
        const Index n = c.numel();
        tape.record(c, [sa, sb, sc, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            if (sa >= 0) t.accum(sa, n) += *dc;
            if (sb >= 0) t.accum(sb, n) += *dc;
        });
    }
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor c(a.shape(), a.values() - b.values());
    if (want_tape({&a, &b})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sb = slot_or_skip(tape, b);
        const Index sc = tape.slot_of(c);
        const Index n = c.numel();
        tape.record(c, [sa, sb, sc, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            if (sa >= 0) t.accum(sa, n) += *dc;
            if (sb >= 0) t.accum(sb, n) -= *dc;
        });
    }
    return c;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    const Index n = a.last_dim();
    if (bias.numel() != n) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(a.shape()));
    }
    Tensor c = Tensor::uninit(a.shape());
    c.matrix() = a.matrix().rowwise() + ConstMatMap(bias.values().data(), 1, n).row(0);
    if (want_tape({&a, &bias})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sb = slot_or_skip(tape, bias);
        const Index sc = tape.slot_of(c);
        const Index rows = a.view_rows();
        const Index numel = a.numel();
        tape.record(c, [sa, sb, sc, rows, n, numel](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            if (sa >= 0) t.accum(sa, numel) += *dc;
            if (sb >= 0) {
                ConstMatMap dC(dc->data(), rows, n);
                MatMap dB(t.accum(sb, n).data(), 1, n);
                dB.row(0) += dC.colwise().sum();
            }
        });
    }
    return c;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor c(a.shape(), a.values() * factor);
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        const Index n = c.numel();
        tape.record(c, [sa, sc, n, factor](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            t.accum(sa, n) += factor * (*dc);
        });
    }
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor c(a.shape(), a.values() * b.values());
    if (want_tape({&a, &b})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sb = slot_or_skip(tape, b);
        const Index sc = tape.slot_of(c);
        const Index n = c.numel();
        tape.record(c, [ad = a.impl(), bd = b.impl(), sa, sb, sc, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            if (sa >= 0) t.accum(sa, n) += (*dc) * bd->values;
            if (sb >= 0) t.accum(sb, n) += (*dc) * ad->values;
        });
    }
    return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.ndim() != 2) {
        throw ShapeError("matmul: right operand must be 2-D, got " + shape_str(b.shape()));
    }
    const Index k = a.last_dim();
    if (k != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const Index m = a.view_rows();
    const Index n = b.dim(1);
    std::vector<Index> out_shape(a.shape().begin(), a.shape().end());
    if (out_shape.empty()) out_shape.push_back(1);
    out_shape.back() = n;
    Tensor c = Tensor::uninit(std::move(out_shape));
    c.matrix().noalias() = a.matrix() * b.matrix();
    if (want_tape({&a, &b})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sb = slot_or_skip(tape, b);
        const Index sc = tape.slot_of(c);
        tape.record(c, [ad = a.impl(), bd = b.impl(), sa, sb, sc, m, k, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dC(dc->data(), m, n);
            if (sa >= 0) {
                ConstMatMap B(bd->values.data(), k, n);
                MatMap dA(t.accum(sa, m * k).data(), m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (sb >= 0) {
                ConstMatMap A(ad->values.data(), m, k);
                MatMap dB(t.accum(sb, k * n).data(), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        });
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(a.shape()));
    const Index m = a.dim(0), n = a.dim(1);
    Tensor c = Tensor::uninit({n, m});
    c.matrix() = a.matrix().transpose();
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [sa, sc, m, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dC(dc->data(), n, m);
            MatMap dA(t.accum(sa, m * n).data(), m, n);
            dA += dC.transpose();
        });
    }
    return c;
}

Tensor tanh(const Tensor& a) {
    Tensor c(a.shape(), a.values().tanh());
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        const Index n = c.numel();
        tape.record(c, [cd = c.impl(), sa, sc, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            t.accum(sa, n) += (*dc) * (1.0 - cd->values.square());
        });
    }
    return c;
}

Tensor softmax_rows(const Tensor& a) {
    const Index n = a.last_dim();
    if (n < 1) throw ShapeError("softmax_rows: empty last axis in " + shape_str(a.shape()));
    if (!a.values().allFinite()) throw NumericError("softmax_rows: non-finite input");
    const Index rows = a.view_rows();
    Tensor c = Tensor::uninit(a.shape());
    auto x = a.matrix();
    auto y = c.matrix();
    for (Index r = 0; r < rows; ++r) {
        const double m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [cd = c.impl(), sa, sc, rows, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap Y(cd->values.data(), rows, n);
            ConstMatMap dY(dc->data(), rows, n);
            MatMap dX(t.accum(sa, rows * n).data(), rows, n);
            for (Index r = 0; r < rows; ++r) {
                const double dot = (Y.row(r).array() * dY.row(r).array()).sum();
                dX.row(r).array() += Y.row(r).array() * (dY.row(r).array() - dot);
            }
        });
    }
    return c;
}

Tensor logsumexp_rows(const Tensor& a) {
    const Index n = a.last_dim();
    if (n < 1) throw ShapeError("logsumexp_rows: empty last axis in " + shape_str(a.shape()));
    if (!a.values().allFinite()) throw NumericError("logsumexp_rows: non-finite input");
    const Index rows = a.view_rows();
    Tensor c = Tensor::uninit({rows, 1});
    auto x = a.matrix();
    for (Index r = 0; r < rows; ++r) {
        const double m = x.row(r).maxCoeff();
        c.values()[r] = m + std::log((x.row(r).array() - m).exp().sum());
    }
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [ad = a.impl(), cd = c.impl(), sa, sc, rows, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap X(ad->values.data(), rows, n);
            MatMap dX(t.accum(sa, rows * n).data(), rows, n);
            for (Index r = 0; r < rows; ++r) {
                // softmax of the row, recovered exactly from the stored LSE
                dX.row(r).array() += (*dc)[r] * (X.row(r).array() - cd->values[r]).exp();
            }
        });
    }
    return c;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    const Index d = a.last_dim();
    if (d == 0) throw ShapeError("layer_norm: last axis is empty in " + shape_str(a.shape()));
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last axis of " + shape_str(a.shape()));
    }
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const Index rows = a.view_rows();
    Tensor c = Tensor::uninit(a.shape());
    Eigen::ArrayXd xhat(a.numel());
    Eigen::ArrayXd inv_std(rows);
    {
        auto x = a.matrix();
        MatMap xh(xhat.data(), rows, d);
        auto g = ConstMatMap(gain.values().data(), 1, d).row(0).array();
        auto b = ConstMatMap(bias.values().data(), 1, d).row(0).array();
        auto y = c.matrix();
        for (Index r = 0; r < rows; ++r) {
            const double mu = x.row(r).mean();
            const double var = (x.row(r).array() - mu).square().mean();
            inv_std[r] = 1.0 / std::sqrt(var + eps);
            xh.row(r) = (x.row(r).array() - mu) * inv_std[r];
            y.row(r) = xh.row(r).array() * g + b;
        }
    }
    if (want_tape({&a, &gain, &bias})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sg = slot_or_skip(tape, gain);
        const Index sb = slot_or_skip(tape, bias);
        const Index sc = tape.slot_of(c);
        tape.record(c, [gd = gain.impl(), xhat = std::move(xhat), inv_std = std::move(inv_std), sa, sg,
                        sb, sc, rows, d](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dY(dc->data(), rows, d);
            ConstMatMap XH(xhat.data(), rows, d);
            if (sg >= 0) {
                MatMap dG(t.accum(sg, d).data(), 1, d);
                for (Index r = 0; r < rows; ++r) {
                    dG.row(0).array() += dY.row(r).array() * XH.row(r).array();
                }
            }
            if (sb >= 0) {
                MatMap dB(t.accum(sb, d).data(), 1, d);
                dB.row(0) += dY.colwise().sum();
            }
            if (sa >= 0) {
                auto g = ConstMatMap(gd->values.data(), 1, d).row(0).array();
                MatMap dX(t.accum(sa, rows * d).data(), rows, d);
                for (Index r = 0; r < rows; ++r) {
                    const auto h = (dY.row(r).array() * g).eval();
                    const double mean_h = h.mean();
                    const double mean_hx = (h * XH.row(r).array()).mean();
                    dX.row(r).array() += inv_std[r] * (h - mean_h - XH.row(r).array() * mean_hx);
                }
            }
        });
    }
    return c;
}

Tensor mean_axis1(const Tensor& a) {
    if (a.ndim() != 3) throw ShapeError("mean_axis1: expects 3-D, got " + shape_str(a.shape()));
    const Index b = a.dim(0), l = a.dim(1), d = a.dim(2);
    if (l < 1) throw ShapeError("mean_axis1: empty middle axis in " + shape_str(a.shape()));
    Tensor c = Tensor::uninit({b, d});
    {
        ConstMatMap x(a.values().data(), b * l, d);
        auto y = c.matrix();
        for (Index i = 0; i < b; ++i) {
            y.row(i) = x.middleRows(i * l, l).colwise().mean();
        }
    }
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [sa, sc, b, l, d](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dC(dc->data(), b, d);
            MatMap dA(t.accum(sa, b * l * d).data(), b * l, d);
            const double w = 1.0 / static_cast<double>(l);
            for (Index i = 0; i < b; ++i) {
                dA.middleRows(i * l, l).rowwise() += w * dC.row(i);
            }
        });
    }
    return c;
}

Tensor sum(const Tensor& a) {
    Tensor c = Tensor::scalar(a.values().sum());
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        const Index n = a.numel();
        tape.record(c, [sa, sc, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            t.accum(sa, n) += (*dc)[0];
        });
    }
    return c;
}

Tensor reshape(const Tensor& a, std::vector<Index> shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Tensor c(std::move(shape), a.values());
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        const Index n = a.numel();
        tape.record(c, [sa, sc, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            t.accum(sa, n) += *dc;
        });
    }
    return c;
}

Tensor slice_axis0(const Tensor& a, Index i) {
    if (a.ndim() < 2) throw ShapeError("slice_axis0: expects rank >= 2, got " + shape_str(a.shape()));
    const Index b = a.dim(0);
    if (i < 0 || i >= b) {
        throw ContractError("slice_axis0: index " + std::to_string(i) + " out of range [0," +
                            std::to_string(b) + ")");
    }
    std::vector<Index> out_shape(a.shape().begin() + 1, a.shape().end());
    const Index stride = a.numel() / b;
    Tensor c(std::move(out_shape), a.values().segment(i * stride, stride));
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        const Index n = a.numel();
        tape.record(c, [sa, sc, n, i, stride](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            t.accum(sa, n).segment(i * stride, stride) += *dc;
        });
    }
    return c;
}

Tensor stack_axis0(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("stack_axis0: no tensors to stack");
    const auto& shape0 = parts[0].shape();
    for (const Tensor& p : parts) {
        if (p.shape() != shape0) {
            throw ShapeError("stack_axis0: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(shape0));
        }
    }
    const Index k = static_cast<Index>(parts.size());
    const Index stride = parts[0].numel();
    std::vector<Index> out_shape;
    out_shape.push_back(k);
    out_shape.insert(out_shape.end(), shape0.begin(), shape0.end());
    Tensor c = Tensor::uninit(std::move(out_shape));
    for (Index j = 0; j < k; ++j) {
        c.values().segment(j * stride, stride) = parts[static_cast<std::size_t>(j)].values();
    }
    bool rec = false;
    if (Tape::active()) {
        for (const Tensor& p : parts) rec = rec || p.requires_grad();
    }
    if (rec) {
        Tape& tape = *Tape::active();
        std::vector<Index> slots(parts.size());
        for (std::size_t j = 0; j < parts.size(); ++j) slots[j] = slot_or_skip(tape, parts[j]);
        const Index sc = tape.slot_of(c);
        tape.record(c, [slots = std::move(slots), sc, stride](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            for (std::size_t j = 0; j < slots.size(); ++j) {
                if (slots[j] >= 0) {
                    t.accum(slots[j], stride) += dc->segment(static_cast<Index>(j) * stride, stride);
                }
            }
        });
    }
    return c;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const Index ra = a.dim(0), rb = b.dim(0), n = a.dim(1);
    Tensor c = Tensor::uninit({ra + rb, n});
    c.values().segment(0, ra * n) = a.values();
    c.values().segment(ra * n, rb * n) = b.values();
    if (want_tape({&a, &b})) {
        Tape& tape = *Tape::active();
        const Index sa = slot_or_skip(tape, a);
        const Index sb = slot_or_skip(tape, b);
        const Index sc = tape.slot_of(c);
        tape.record(c, [sa, sb, sc, ra, rb, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            if (sa >= 0) t.accum(sa, ra * n) += dc->segment(0, ra * n);
            if (sb >= 0) t.accum(sb, rb * n) += dc->segment(ra * n, rb * n);
        });
    }
    return c;
}

Tensor gather_rows(const Tensor& table, const std::vector<Index>& ids) {
    if (table.ndim() != 2) throw ShapeError("gather_rows: expects 2-D table, got " + shape_str(table.shape()));
    const Index r = table.dim(0), n = table.dim(1);
    for (Index id : ids) {
        if (id < 0 || id >= r) {
            throw ContractError("gather_rows: row " + std::to_string(id) + " out of range [0," +
                                std::to_string(r) + ")");
        }
    }
    const Index k = static_cast<Index>(ids.size());
    Tensor c = Tensor::uninit({k, n});
    auto src = table.matrix();
    auto dst = c.matrix();
    for (Index j = 0; j < k; ++j) dst.row(j) = src.row(ids[static_cast<std::size_t>(j)]);
    if (want_tape({&table})) {
        Tape& tape = *Tape::active();
        const Index st = tape.slot_of(table);
        const Index sc = tape.slot_of(c);
        tape.record(c, [ids, st, sc, r, n, k](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dC(dc->data(), k, n);
            MatMap dT(t.accum(st, r * n).data(), r, n);
            for (Index j = 0; j < k; ++j) dT.row(ids[static_cast<std::size_t>(j)]) += dC.row(j);
        });
    }
    return c;
}

Tensor take_positions(const Tensor& a, const std::vector<Index>& pos) {
    if (a.ndim() != 3) throw ShapeError("take_positions: expects 3-D, got " + shape_str(a.shape()));
    const Index b = a.dim(0), o = a.dim(1), d = a.dim(2);
    if (static_cast<Index>(pos.size()) != b) {
        throw ShapeError("take_positions: " + std::to_string(pos.size()) + " positions for batch " +
                         std::to_string(b));
    }
    for (Index p : pos) {
        if (p < 0 || p >= o) {
            throw ContractError("take_positions: position " + std::to_string(p) + " out of range [0," +
                                std::to_string(o) + ")");
        }
    }
    Tensor c = Tensor::uninit({b, d});
    {
        ConstMatMap src(a.values().data(), b * o, d);
        auto dst = c.matrix();
        for (Index i = 0; i < b; ++i) dst.row(i) = src.row(i * o + pos[static_cast<std::size_t>(i)]);
    }
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [pos, sa, sc, b, o, d](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dC(dc->data(), b, d);
            MatMap dA(t.accum(sa, b * o * d).data(), b * o, d);
            for (Index i = 0; i < b; ++i) dA.row(i * o + pos[static_cast<std::size_t>(i)]) += dC.row(i);
        });
    }
    return c;
}

Tensor take_per_row(const Tensor& a, const std::vector<Index>& cols) {
    if (a.ndim() != 2) throw ShapeError("take_per_row: expects 2-D, got " + shape_str(a.shape()));
    const Index m = a.dim(0), n = a.dim(1);
    if (static_cast<Index>(cols.size()) != m) {
        throw ShapeError("take_per_row: " + std::to_string(cols.size()) + " columns for " +
                         std::to_string(m) + " rows");
    }
    for (Index cidx : cols) {
        if (cidx < 0 || cidx >= n) {
            throw ContractError("take_per_row: column " + std::to_string(cidx) + " out of range [0," +
                                std::to_string(n) + ")");
        }
    }
    Tensor c = Tensor::uninit({m, 1});
    for (Index i = 0; i < m; ++i) c.values()[i] = a.values()[i * n + cols[static_cast<std::size_t>(i)]];
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [cols, sa, sc, m, n](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            Eigen::ArrayXd& dA = t.accum(sa, m * n);
            for (Index i = 0; i < m; ++i) dA[i * n + cols[static_cast<std::size_t>(i)]] += (*dc)[i];
        });
    }
    return c;
}

Tensor gather_cols(const Tensor& a, const std::vector<Index>& ids) {
    if (a.ndim() != 2) throw ShapeError("gather_cols: expects 2-D, got " + shape_str(a.shape()));
    const Index m = a.dim(0), n = a.dim(1);
    for (Index id : ids) {
        if (id < 0 || id >= n) {
            throw ContractError("gather_cols: column " + std::to_string(id) + " out of range [0," +
                                std::to_string(n) + ")");
        }
    }
    const Index k = static_cast<Index>(ids.size());
    Tensor c = Tensor::uninit({m, k});
    auto src = a.matrix();
    auto dst = c.matrix();
    for (Index j = 0; j < k; ++j) dst.col(j) = src.col(ids[static_cast<std::size_t>(j)]);
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [ids, sa, sc, m, n, k](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap dC(dc->data(), m, k);
            MatMap dA(t.accum(sa, m * n).data(), m, n);
            for (Index j = 0; j < k; ++j) dA.col(ids[static_cast<std::size_t>(j)]) += dC.col(j);
        });
    }
    return c;
}

Tensor normalize_rows(const Tensor& a, double eps) {
    if (eps <= 0.0) throw ContractError("normalize_rows: eps must be positive");
    const Index n = a.last_dim();
    const Index rows = a.view_rows();
    Tensor c = Tensor::uninit(a.shape());
    Eigen::ArrayXd norms(rows);
    {
        auto x = a.matrix();
        auto y = c.matrix();
        for (Index r = 0; r < rows; ++r) {
            norms[r] = x.row(r).norm();
            y.row(r) = x.row(r) / std::max(norms[r], eps);
        }
    }
    if (want_tape({&a})) {
        Tape& tape = *Tape::active();
        const Index sa = tape.slot_of(a);
        const Index sc = tape.slot_of(c);
        tape.record(c, [cd = c.impl(), norms = std::move(norms), sa, sc, rows, n, eps](GradTable& t) {
            const Eigen::ArrayXd* dc = t.find(sc);
            if (!dc) return;
            ConstMatMap Y(cd->values.data(), rows, n);
            ConstMatMap dY(dc->data(), rows, n);
            MatMap dX(t.accum(sa, rows * n).data(), rows, n);
            for (Index r = 0; r < rows; ++r) {
                if (norms[r] > eps) {
                    const double ydy = Y.row(r).dot(dY.row(r));
                    dX.row(r) += (dY.row(r) - ydy * Y.row(r)) / norms[r];
                } else {
                    dX.row(r) += dY.row(r) / eps;
                }
            }
        });
    }
    return c;
}

}  // namespace stablept

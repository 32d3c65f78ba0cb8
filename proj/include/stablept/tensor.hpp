#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "stablept/error.hpp"
#include "stablept/rng.hpp"

namespace stablept {

using Index = Eigen::Index;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

class Tape;

namespace detail {

struct TensorData {
    std::vector<Index> shape;
    Eigen::ArrayXd values;
    Eigen::ArrayXd grad;  // allocated lazily, only for requires_grad tensors
    bool requires_grad = false;
    // reference into the computation tape that produced / touched this tensor
    std::uint64_t tape_id = 0;
    Index tape_slot = -1;
    Index tape_node = -1;
};

}  // namespace detail

inline Index shape_numel(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<Index>& shape);

// Dense row-major tensor of doubles. Copies are cheap handles sharing the
// same storage; clone() makes a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<Index> shape);
    Tensor(std::vector<Index> shape, Eigen::ArrayXd values);
    Tensor(std::vector<Index> shape, std::initializer_list<double> values);

    static Tensor zeros(std::vector<Index> shape);
    static Tensor full(std::vector<Index> shape, double value);
    static Tensor scalar(double value);
    static Tensor randn(std::vector<Index> shape, Rng& rng, double stddev = 1.0, double mean = 0.0);
    // uninitialized buffer for ops that overwrite every element
    static Tensor uninit(std::vector<Index> shape);

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<Index>& shape() const { return d_->shape; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    Index dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    Index numel() const { return d_->values.size(); }
    Index last_dim() const { return d_->shape.empty() ? 1 : d_->shape.back(); }
    Index view_rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

    Eigen::ArrayXd& values() { return d_->values; }
    const Eigen::ArrayXd& values() const { return d_->values; }
    double value() const;  // scalar tensors only
    double at(std::initializer_list<Index> idx) const;

    // 2-D view: (numel/last_dim) x last_dim
    MatMap matrix() { return MatMap(d_->values.data(), view_rows(), last_dim()); }
    ConstMatMap matrix() const { return ConstMatMap(d_->values.data(), view_rows(), last_dim()); }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    // flag without allocating; grad buffers materialize on first accumulation
    void mark_requires_grad() { d_->requires_grad = true; }
    bool has_grad() const { return d_->grad.size() > 0; }
    // zero-filled until a backward pass accumulates into it
    const Eigen::ArrayXd& grad() const;
    Eigen::ArrayXd& mutable_grad();
    void zero_grad();

    Tensor clone() const;

    const std::shared_ptr<detail::TensorData>& impl() const { return d_; }

private:
    std::shared_ptr<detail::TensorData> d_;
    friend class Tape;
};

// Per-backward-call gradient accumulator, indexed by tape slot. Using local
// buffers keeps repeated backward() calls additive: each call deposits exactly
// d(root)/d(node) on top of whatever grad is already stored.
class GradTable {
public:
    explicit GradTable(Index slots) : g_(static_cast<std::size_t>(slots)) {}
    Eigen::ArrayXd* find(Index slot) {
        auto& a = g_[static_cast<std::size_t>(slot)];
        return a.size() > 0 ? &a : nullptr;
    }
    Eigen::ArrayXd& accum(Index slot, Index size) {
        auto& a = g_[static_cast<std::size_t>(slot)];
        if (a.size() == 0) a = Eigen::ArrayXd::Zero(size);
        return a;
    }
    std::size_t size() const { return g_.size(); }
    const Eigen::ArrayXd& at(std::size_t i) const { return g_[i]; }

private:
    std::vector<Eigen::ArrayXd> g_;
};

// Reverse-mode tape: an ordered list of recorded operations in topological
// order. Constructing a Tape makes it the active tape for the current thread;
// destruction restores the previous one. Ops record themselves only while a
// tape is active and some input requires gradients.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    // `pull` reads the output slot's gradient from the table and accumulates
    // into the input slots. Inputs that do not require grad get slot -1 and
    // are skipped; closures capture whatever values their rule needs.
    void record(Tensor& output, std::function<void(GradTable&)> pull);

    Index slot_of(const Tensor& t);  // assigns a slot on this tape if needed

    // Seeds d(root)/d(root)=1 and replays backward rules in reverse order,
    // then adds the accumulated partials onto every requires_grad tensor.
    void backward(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    std::uint64_t id() const { return id_; }

private:
    struct Node {
        std::function<void(GradTable&)> pull;
    };
    std::uint64_t id_;
    Index next_slot_ = 0;
    std::vector<Node> nodes_;
    std::vector<std::shared_ptr<detail::TensorData>> slot_owner_;
    Tape* prev_ = nullptr;
};

// Scope that suspends recording (used by finite-difference evaluations).
class NoTapeScope {
public:
    NoTapeScope();
    ~NoTapeScope();
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* saved_;
};

// Free-function form of the tape replay; the root must be a scalar produced
// on a live tape.
void backward(const Tensor& root);

}  // namespace stablept

#include "stablept/tensor.hpp"

#include <atomic>
#include <sstream>

namespace stablept {

std::string shape_str(const std::vector<Index>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<Index> shape) : d_(std::make_shared<detail::TensorData>()) {
    d_->shape = std::move(shape);
    d_->values = Eigen::ArrayXd::Zero(shape_numel(d_->shape));
}

namespace {
Eigen::ArrayXd values_from_list(std::initializer_list<double> values) {
    Eigen::ArrayXd a(static_cast<Index>(values.size()));
    Index i = 0;
    for (double v : values) a[i++] = v;
    return a;
}
}  // namespace

Tensor::Tensor(std::vector<Index> shape, Eigen::ArrayXd values)
    : d_(std::make_shared<detail::TensorData>()) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    d_->shape = std::move(shape);
    d_->values = std::move(values);
}

Tensor::Tensor(std::vector<Index> shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), values_from_list(values)) {}

Tensor Tensor::zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<Index> shape, double value) {
    Tensor t(std::move(shape));
    t.values().setConstant(value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::uninit(std::vector<Index> shape) {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData>();
    t.d_->shape = std::move(shape);
    t.d_->values.resize(shape_numel(t.d_->shape));
    return t;
}

Tensor Tensor::randn(std::vector<Index> shape, Rng& rng, double stddev, double mean) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.numel(); ++i) t.values()[i] = rng.normal(mean, stddev);
    return t;
}

double Tensor::value() const {
    if (numel() != 1) {
        throw ContractError("value(): tensor has shape " + shape_str(shape()) + ", expected a scalar");
    }
    return d_->values[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) {
        throw ShapeError("at(): rank mismatch for shape " + shape_str(shape()));
    }
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) {
        flat = flat * d_->shape[k] + i;
        ++k;
    }
    return d_->values[flat];
}

Tensor& Tensor::set_requires_grad(bool on) {
    d_->requires_grad = on;
    if (on && d_->grad.size() == 0) d_->grad = Eigen::ArrayXd::Zero(d_->values.size());
    if (!on) d_->grad.resize(0);
    return *this;
}

const Eigen::ArrayXd& Tensor::grad() const {
    if (!d_->requires_grad) throw ContractError("grad(): tensor does not require gradients");
    if (d_->grad.size() == 0) d_->grad = Eigen::ArrayXd::Zero(d_->values.size());
    return d_->grad;
}

Eigen::ArrayXd& Tensor::mutable_grad() {
    grad();  // materialize
    return d_->grad;
}

void Tensor::zero_grad() {
    if (d_->grad.size() > 0) d_->grad.setZero();
}

Tensor Tensor::clone() const {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = d_->requires_grad;
    if (d_->requires_grad) t.d_->grad = d_->grad;
    return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};

void set_active(Tape* t) { g_active_tape = t; }
}  // namespace

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {
    prev_ = g_active_tape;
    set_active(this);
}

Tape::~Tape() { set_active(prev_); }

Tape* Tape::active() { return g_active_tape; }

Index Tape::slot_of(const Tensor& t) {
    auto& d = *t.impl();
    if (d.tape_id != id_ || d.tape_slot < 0) {
        d.tape_id = id_;
        d.tape_slot = next_slot_++;
        d.tape_node = -1;
        slot_owner_.push_back(t.impl());
    }
    return d.tape_slot;
}

void Tape::record(Tensor& output, std::function<void(GradTable&)> pull) {
    output.mark_requires_grad();
    slot_of(output);
    output.impl()->tape_node = static_cast<Index>(nodes_.size());
    nodes_.push_back(Node{std::move(pull)});
}

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.numel() != 1) {
        throw ContractError("backward: root must be a scalar tensor");
    }
    const auto& rd = *root.impl();
    if (rd.tape_id != id_ || rd.tape_node < 0) {
        throw ContractError("backward: root was not produced on this tape");
    }
    GradTable table(next_slot_);
    table.accum(rd.tape_slot, 1)[0] = 1.0;
    for (Index n = rd.tape_node; n >= 0; --n) {
        nodes_[static_cast<std::size_t>(n)].pull(table);
    }
    for (std::size_t s = 0; s < slot_owner_.size(); ++s) {
        auto& owner = *slot_owner_[s];
        if (!owner.requires_grad) continue;
        const Eigen::ArrayXd& local = table.at(s);
        if (local.size() == 0) continue;
        if (owner.grad.size() == 0) owner.grad = Eigen::ArrayXd::Zero(owner.values.size());
        owner.grad += local;
    }
}

NoTapeScope::NoTapeScope() : saved_(g_active_tape) { set_active(nullptr); }
NoTapeScope::~NoTapeScope() { set_active(saved_); }

void backward(const Tensor& root) {
    Tape* t = Tape::active();
    if (!t) throw ContractError("backward: no active tape");
    t->backward(root);
}

}  // namespace stablept

#include "stablept/losses.hpp"

#include "stablept/ops.hpp"

namespace stablept {

namespace {
constexpr double kExcludedScore = -1e30;  // exp underflows to exactly 0
}

Tensor cosine_sim(const Tensor& u, const Tensor& v, double eps) {
    if (u.numel() != v.numel()) {
        throw ShapeError("cosine_sim: size mismatch " + shape_str(u.shape()) + " vs " +
                         shape_str(v.shape()));
    }
    const Index d = u.numel();
    Tensor nu = normalize_rows(reshape(u, {1, d}), eps);
    Tensor nv = normalize_rows(reshape(v, {1, d}), eps);
    return reshape(matmul(nu, reshape(nv, {d, 1})), {1});
}

Tensor supcon_loss(const Tensor& pooled, const std::vector<Index>& labels, double tau) {
    if (pooled.ndim() != 2) {
        throw ShapeError("supcon_loss: expected (b, d), got " + shape_str(pooled.shape()));
    }
    const Index b = pooled.dim(0);
    if (b < 2) throw ContractError("supcon_loss: batch must hold at least 2 examples");
    if (static_cast<Index>(labels.size()) != b) {
        throw ShapeError("supcon_loss: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
    }
    if (tau <= 0.0) throw ContractError("supcon_loss: temperature must be positive");

    // constant weights: W[i][j] = 1/(b*|P(i)|) on positives, anchor_w[i] = sum_j W[i][j]
    Tensor pos_w({b, b});
    Tensor anchor_w({b, 1});
    bool any_positive = false;
    for (Index i = 0; i < b; ++i) {
        Index n_pos = 0;
        for (Index j = 0; j < b; ++j) {
            if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                ++n_pos;
            }
        }
        if (n_pos == 0) continue;
        any_positive = true;
        anchor_w.values()[i] = 1.0 / static_cast<double>(b);
        const double w = 1.0 / (static_cast<double>(b) * static_cast<double>(n_pos));
        for (Index j = 0; j < b; ++j) {
            if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                pos_w.values()[i * b + j] = w;
            }
        }
    }
    if (!any_positive) return Tensor::scalar(0.0);

    Tensor normalized = normalize_rows(pooled);
    Tensor sims = matmul(normalized, transpose(normalized));  // cosine similarity matrix
    Tensor scaled = scale(sims, 1.0 / tau);
    Tensor diag_mask({b, b});
    for (Index i = 0; i < b; ++i) diag_mask.values()[i * b + i] = kExcludedScore;
    Tensor masked = add(scaled, diag_mask);  // k = i drops out of the denominators

    Tensor lse = logsumexp_rows(masked);  // (b, 1)
    Tensor lse_term = sum(mul(anchor_w, lse));
    Tensor pos_term = sum(mul(pos_w, masked));  // diagonal weights are 0
    return reshape(sub(lse_term, pos_term), {1});
}

Tensor mlm_loss(const Tensor& vocab_logits, const std::vector<Index>& labels,
                const std::vector<Index>& label_word_ids) {
    if (vocab_logits.ndim() != 2) {
        throw ShapeError("mlm_loss: expected (b, V), got " + shape_str(vocab_logits.shape()));
    }
    const Index b = vocab_logits.dim(0);
    const Index v = vocab_logits.dim(1);
    if (static_cast<Index>(labels.size()) != b) {
        throw ShapeError("mlm_loss: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
    }
    std::vector<Index> word_per_row(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) {
        const Index y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= static_cast<Index>(label_word_ids.size())) {
            throw ContractError("mlm_loss: label " + std::to_string(y) + " out of range");
        }
        const Index w = label_word_ids[static_cast<std::size_t>(y)];
        if (w < 0 || w >= v) {
            throw ContractError("mlm_loss: label word id " + std::to_string(w) +
                                " outside the vocabulary");
        }
        word_per_row[static_cast<std::size_t>(i)] = w;
    }
    Tensor lse = logsumexp_rows(vocab_logits);
    Tensor picked = take_per_row(vocab_logits, word_per_row);
    return reshape(scale(sum(sub(lse, picked)), 1.0 / static_cast<double>(b)), {1});
}

LossBundle total_loss(const Tensor& l_mlm, const Tensor& l_cl) {
    LossBundle out;
    out.mlm = l_mlm;
    out.cl = l_cl.defined() ? l_cl : Tensor::scalar(0.0);
    out.total = add(reshape(out.mlm, {1}), reshape(out.cl, {1}));
    return out;
}

}  // namespace stablept

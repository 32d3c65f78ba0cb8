#pragma once

#include <vector>

#include "stablept/tensor.hpp"

namespace stablept {

// u.v / (max(|u|, eps) * max(|v|, eps)); differentiable on tape.
Tensor cosine_sim(const Tensor& u, const Tensor& v, double eps = 1e-8);

// Supervised contrastive loss over pooled prompt embeddings (b, d). For each
// anchor i with positives P(i) = { j != i : y_j = y_i }:
//   -(1/|P(i)|) sum_{j in P(i)} log( exp(s_ij/tau) / sum_{k != i} exp(s_ik/tau) )
// averaged over all b anchors; empty-positive anchors contribute 0, and a
// batch with no positives at all yields 0. The self term is excluded from
// both positives and denominator.
Tensor supcon_loss(const Tensor& pooled, const std::vector<Index>& labels, double tau);

// Mean over the batch of -log softmax(z_i)[label_word(y_i)] over the full
// vocabulary.
Tensor mlm_loss(const Tensor& vocab_logits, const std::vector<Index>& labels,
                const std::vector<Index>& label_word_ids);

struct LossBundle {
    Tensor cl;
    Tensor mlm;
    Tensor total;  // exact unweighted sum
};

// total = mlm + cl; pass an undefined cl tensor for variants without a CL
// head and it is replaced by a constant zero.
LossBundle total_loss(const Tensor& l_mlm, const Tensor& l_cl);

}  // namespace stablept

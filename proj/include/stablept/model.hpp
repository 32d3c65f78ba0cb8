#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stablept/taskgen.hpp"
#include "stablept/tensor.hpp"

namespace stablept {

// Which dataflow the forward pass uses. Full is the architecture as designed;
// the others are its ablations.
enum class Variant { Full, WithoutCL, WithoutGD, WithoutSP, WithoutHP };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

enum class InitStrategy { Random, Label, Vocab, Top1k, Task };

const char* strategy_name(InitStrategy s);
InitStrategy strategy_from_name(const std::string& name);

struct ModelConfig {
    Index vocab_size = 128;
    Index max_seq_len = 32;
    Index embed_dim = 32;
    Index prompt_len = 10;
    Index frozen_depth = 2;
    Index num_classes = 2;
    Index mask_token_id = 1;
    Index pad_token_id = 0;
    double temperature = 0.1;
    std::vector<Index> label_word_ids = {22, 23};

    Index ffn_hidden() const { return 4 * embed_dim; }
    void validate() const;
};

// One standard single-head transformer layer: attention projections,
// position-wise feed-forward (tanh, hidden 4d), and two layer norms.
struct TransformerLayer {
    Tensor wq, wk, wv, wo;              // (d, d)
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;  // (d, h), (h), (h, d), (d)
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;  // (d)

    static TransformerLayer init(Index d, Index hidden, Rng& rng);
    void set_requires_grad(bool on);
    std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
    TransformerLayer clone() const;
};

// All parameter groups. The frozen backbone (embeddings + frozen_depth
// encoder layers) never requires gradients; the trainable set is exactly
// {semantic encoder, generative decoder, soft prompt}. The LM head is the
// transposed token-embedding table (weight tying), frozen with the backbone.
struct ModelState {
    ModelConfig config;
    std::uint64_t backbone_seed = 0;

    Tensor token_embedding;    // (V, d), frozen
    Tensor token_embedding_t;  // (d, V), cached transpose of the table
    Tensor pos_embedding;      // (o, d), frozen
    std::vector<TransformerLayer> frozen_layers;

    TransformerLayer sem_encoder;
    TransformerLayer gen_decoder;
    Tensor soft_prompt;  // (l, d)

    static ModelState init(const ModelConfig& config, std::uint64_t backbone_seed);

    // Fresh random init of the trainable groups for one run; the backbone is
    // untouched. The task is needed by corpus-dependent prompt strategies.
    void reinit_trainable(std::uint64_t seed, InitStrategy strategy, const FewShotTask& task);

    std::vector<std::pair<std::string, Tensor>> trainable_params() const;
    std::vector<std::pair<std::string, Tensor>> frozen_params() const;
    void zero_grad();
    ModelState clone() const;
};

// FNV-1a over the raw bytes of all frozen parameters.
std::uint64_t frozen_checksum(const ModelState& state);

struct EncodedBatch {
    Tensor e_se;  // (b, o, d), no gradient state
    std::vector<Index> mask_positions;
    std::vector<Index> valid_lens;  // valid positions form a prefix
    Index batch() const { return static_cast<Index>(mask_positions.size()); }
};

// Frozen path: embedding lookup + positional embeddings + frozen encoder
// stack over [template, input] token sequences.
EncodedBatch encode_text(const ModelState& state, const HardTemplate& tmpl,
                         std::span<const std::vector<Index>> inputs);

// Trainable single-head self-attention layer over the encoded batch; pad
// positions are excluded from the attention keys.
Tensor sem_encode(const ModelState& state, const Tensor& e_se, const std::vector<Index>& valid_lens);

// Cross-attention: the soft prompt queries the semantic states; residual onto
// the prompt, then feed-forward. Returns (b, l, d).
Tensor gen_decode(const ModelState& state, const Tensor& prompt, const Tensor& h_se,
                  const std::vector<Index>& valid_lens);

// Mean pooling over the prompt axis: (b, l, d) -> (b, d).
Tensor pool_prompt(const Tensor& h_sp);

struct VerbalizeOut {
    Tensor label_logits;  // (b, num_classes)
    Tensor vocab_logits;  // (b, V)
};

// Project the mask-position states through the tied LM head and pick the
// label-word columns.
VerbalizeOut verbalize(const ModelState& state, const Tensor& h_se,
                       const std::vector<Index>& mask_positions);

Tensor init_soft_prompt(InitStrategy strategy, const ModelConfig& config,
                        const Tensor& token_embedding, const FewShotTask& task, std::uint64_t seed);

struct ForwardOut {
    Tensor label_logits;               // (b, num_classes)
    Tensor vocab_logits;               // (b, V)
    std::optional<Tensor> pooled_prompt;  // (b, d); absent for WithoutCL
};

// Variant dataflows over an already-encoded batch. WithoutHP changes the
// template, not the dataflow: encode with bare_mask_template() upstream.
ForwardOut forward(const ModelState& state, const EncodedBatch& batch, Variant variant);

// Inference fast path: exactly forward(...).label_logits, skipping the
// decoder-side subgraph that predictions never read.
Tensor forward_label_logits(const ModelState& state, const EncodedBatch& batch, Variant variant);

// argmax over label-word logits, ties resolved toward the lowest class index
std::vector<Index> predict(const Tensor& label_logits);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Checkpoint: JSON-lines, header with schema version + config, then one line
// per named parameter in row-major order.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace stablept

#include "stablept/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "stablept/ops.hpp"

namespace stablept {

namespace {
enum RngTag : std::uint64_t {
    kTagFrozen = 1,
    kTagTrainableSem = 10,
    kTagTrainableGen = 11,
    kTagPrompt = 20,
};
constexpr double kMaskedScore = -1e30;
}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::WithoutCL: return "wo_cl";
        case Variant::WithoutGD: return "wo_gd";
        case Variant::WithoutSP: return "wo_sp";
        case Variant::WithoutHP: return "wo_hp";
    }
    return "?";
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::Full;
    if (name == "wo_cl") return Variant::WithoutCL;
    if (name == "wo_gd") return Variant::WithoutGD;
    if (name == "wo_sp") return Variant::WithoutSP;
    if (name == "wo_hp") return Variant::WithoutHP;
    throw ContractError("unknown variant: " + name);
}

const char* strategy_name(InitStrategy s) {
    switch (s) {
        case InitStrategy::Random: return "Random";
        case InitStrategy::Label: return "Label";
        case InitStrategy::Vocab: return "Vocab";
        case InitStrategy::Top1k: return "Top-1k";
        case InitStrategy::Task: return "Task";
    }
    return "?";
}

InitStrategy strategy_from_name(const std::string& name) {
    if (name == "Random") return InitStrategy::Random;
    if (name == "Label") return InitStrategy::Label;
    if (name == "Vocab") return InitStrategy::Vocab;
    if (name == "Top-1k" || name == "Top1k") return InitStrategy::Top1k;
    if (name == "Task") return InitStrategy::Task;
    throw ContractError("unknown init strategy: " + name);
}

void ModelConfig::validate() const {
    if (prompt_len < 1) throw ContractError("config: prompt_len must be >= 1");
    if (embed_dim < 2) throw ContractError("config: embed_dim must be >= 2");
    if (mask_token_id == pad_token_id) throw ContractError("config: mask and pad ids collide");
    if (temperature <= 0.0) throw ContractError("config: temperature must be positive");
    if (static_cast<Index>(label_word_ids.size()) != num_classes) {
        throw ContractError("config: need one label word per class");
    }
    std::set<Index> distinct;
    for (Index w : label_word_ids) {
        if (w < 0 || w >= vocab_size) throw ContractError("config: label word id out of vocabulary");
        if (!distinct.insert(w).second) throw ContractError("config: label word ids must be distinct");
    }
}

TransformerLayer TransformerLayer::init(Index d, Index hidden, Rng& rng) {
    TransformerLayer l;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    const double hs = 1.0 / std::sqrt(static_cast<double>(hidden));
    l.wq = Tensor::randn({d, d}, rng, ws);
    l.wk = Tensor::randn({d, d}, rng, ws);
    l.wv = Tensor::randn({d, d}, rng, ws);
    l.wo = Tensor::randn({d, d}, rng, ws);
    l.ff1_w = Tensor::randn({d, hidden}, rng, ws);
    l.ff1_b = Tensor::zeros({hidden});
    l.ff2_w = Tensor::randn({hidden, d}, rng, hs);
    l.ff2_b = Tensor::zeros({d});
    l.ln1_g = Tensor::full({d}, 1.0);
    l.ln1_b = Tensor::zeros({d});
    l.ln2_g = Tensor::full({d}, 1.0);
    l.ln2_b = Tensor::zeros({d});
    return l;
}

void TransformerLayer::set_requires_grad(bool on) {
    for (Tensor* t : {&wq, &wk, &wv, &wo, &ff1_w, &ff1_b, &ff2_w, &ff2_b, &ln1_g, &ln1_b, &ln2_g,
                      &ln2_b}) {
        t->set_requires_grad(on);
    }
}

std::vector<std::pair<std::string, Tensor>> TransformerLayer::named(const std::string& prefix) const {
    return {
        {prefix + ".wq", wq},       {prefix + ".wk", wk},       {prefix + ".wv", wv},
        {prefix + ".wo", wo},       {prefix + ".ff1_w", ff1_w}, {prefix + ".ff1_b", ff1_b},
        {prefix + ".ff2_w", ff2_w}, {prefix + ".ff2_b", ff2_b}, {prefix + ".ln1_g", ln1_g},
        {prefix + ".ln1_b", ln1_b}, {prefix + ".ln2_g", ln2_g}, {prefix + ".ln2_b", ln2_b},
    };
}

TransformerLayer TransformerLayer::clone() const {
    TransformerLayer c;
    c.wq = wq.clone();
    c.wk = wk.clone();
    c.wv = wv.clone();
    c.wo = wo.clone();
    c.ff1_w = ff1_w.clone();
    c.ff1_b = ff1_b.clone();
    c.ff2_w = ff2_w.clone();
    c.ff2_b = ff2_b.clone();
    c.ln1_g = ln1_g.clone();
    c.ln1_b = ln1_b.clone();
    c.ln2_g = ln2_g.clone();
    c.ln2_b = ln2_b.clone();
    return c;
}

namespace {

Tensor transpose_value(const Tensor& t) {
    NoTapeScope no_tape;
    return transpose(t);
}

}  // namespace

ModelState ModelState::init(const ModelConfig& config, std::uint64_t backbone_seed) {
    config.validate();
    ModelState s;
    s.config = config;
    s.backbone_seed = backbone_seed;

    Rng frozen_rng = Rng(backbone_seed).split(kTagFrozen);
    s.token_embedding = Tensor::randn({config.vocab_size, config.embed_dim}, frozen_rng, 1.0);
    s.pos_embedding = Tensor::randn({config.max_seq_len, config.embed_dim}, frozen_rng, 0.3);
    for (Index i = 0; i < config.frozen_depth; ++i) {
        s.frozen_layers.push_back(
            TransformerLayer::init(config.embed_dim, config.ffn_hidden(), frozen_rng));
    }
    s.token_embedding_t = transpose_value(s.token_embedding);

    Rng sem_rng = Rng(backbone_seed).split(kTagTrainableSem);
    s.sem_encoder = TransformerLayer::init(config.embed_dim, config.ffn_hidden(), sem_rng);
    Rng gen_rng = Rng(backbone_seed).split(kTagTrainableGen);
    s.gen_decoder = TransformerLayer::init(config.embed_dim, config.ffn_hidden(), gen_rng);
    Rng prompt_rng = Rng(backbone_seed).split(kTagPrompt);
    s.soft_prompt = Tensor::randn({config.prompt_len, config.embed_dim}, prompt_rng, 0.02);

    s.sem_encoder.set_requires_grad(true);
    s.gen_decoder.set_requires_grad(true);
    s.soft_prompt.set_requires_grad(true);
    return s;
}

void ModelState::reinit_trainable(std::uint64_t seed, InitStrategy strategy,
                                  const FewShotTask& task) {
    Rng sem_rng = Rng(seed).split(kTagTrainableSem);
    sem_encoder = TransformerLayer::init(config.embed_dim, config.ffn_hidden(), sem_rng);
    Rng gen_rng = Rng(seed).split(kTagTrainableGen);
    gen_decoder = TransformerLayer::init(config.embed_dim, config.ffn_hidden(), gen_rng);
    soft_prompt = init_soft_prompt(strategy, config, token_embedding, task, seed);
    sem_encoder.set_requires_grad(true);
    gen_decoder.set_requires_grad(true);
    soft_prompt.set_requires_grad(true);
}

std::vector<std::pair<std::string, Tensor>> ModelState::trainable_params() const {
    auto out = sem_encoder.named("sem_encoder");
    auto gen = gen_decoder.named("gen_decoder");
    out.insert(out.end(), gen.begin(), gen.end());
    out.emplace_back("soft_prompt", soft_prompt);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ModelState::frozen_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_embedding", token_embedding);
    out.emplace_back("pos_embedding", pos_embedding);
    for (std::size_t i = 0; i < frozen_layers.size(); ++i) {
        auto named = frozen_layers[i].named("frozen." + std::to_string(i));
        out.insert(out.end(), named.begin(), named.end());
    }
    return out;
}

void ModelState::zero_grad() {
    for (auto& [name, t] : trainable_params()) {
        (void)name;
        t.zero_grad();
    }
}

ModelState ModelState::clone() const {
    ModelState c;
    c.config = config;
    c.backbone_seed = backbone_seed;
    c.token_embedding = token_embedding;  // frozen tensors shared read-only
    c.token_embedding_t = token_embedding_t;
    c.pos_embedding = pos_embedding;
    c.frozen_layers = frozen_layers;
    c.sem_encoder = sem_encoder.clone();
    c.gen_decoder = gen_decoder.clone();
    c.soft_prompt = soft_prompt.clone();
    return c;
}

std::uint64_t frozen_checksum(const ModelState& state) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto eat = [&h](const Tensor& t) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(t.values().data());
        const std::size_t n = static_cast<std::size_t>(t.numel()) * sizeof(double);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    };
    for (auto& [name, t] : state.frozen_params()) {
        (void)name;
        eat(t);
    }
    return h;
}

namespace {

// -1e30 on key columns at or past the valid prefix; exp() underflows to 0
Tensor key_mask_bias(Index q_rows, Index k_len, Index valid) {
    Tensor bias({q_rows, k_len});
    if (valid < k_len) {
        bias.matrix().rightCols(k_len - valid).setConstant(kMaskedScore);
    }
    return bias;
}

// standard encoder layer body shared by the frozen stack and the semantic
// encoder; x is (b, L, d), pads masked out of the attention keys
Tensor encoder_layer_forward(const TransformerLayer& L, const Tensor& x,
                             const std::vector<Index>& valid_lens) {
    const Index b = x.dim(0), o = x.dim(1), d = x.dim(2);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor q = matmul(x, L.wq);
    Tensor k = matmul(x, L.wk);
    Tensor v = matmul(x, L.wv);
    std::vector<Tensor> per_example;
    per_example.reserve(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) {
        const Index valid = valid_lens[static_cast<std::size_t>(i)];
        Tensor scores = scale(matmul(slice_axis0(q, i), transpose(slice_axis0(k, i))), inv_sqrt_d);
        scores = add(scores, key_mask_bias(o, o, valid));
        per_example.push_back(matmul(softmax_rows(scores), slice_axis0(v, i)));
    }
    Tensor attn_out = matmul(stack_axis0(per_example), L.wo);
    Tensor z1 = layer_norm(add(x, attn_out), L.ln1_g, L.ln1_b);
    Tensor f = add_bias(matmul(tanh(add_bias(matmul(z1, L.ff1_w), L.ff1_b)), L.ff2_w), L.ff2_b);
    return layer_norm(add(z1, f), L.ln2_g, L.ln2_b);
}

void check_valid_lens(const char* op, const Tensor& x, const std::vector<Index>& valid_lens) {
    if (static_cast<Index>(valid_lens.size()) != x.dim(0)) {
        throw ShapeError(std::string(op) + ": " + std::to_string(valid_lens.size()) +
                         " lengths for batch " + std::to_string(x.dim(0)));
    }
    for (Index len : valid_lens) {
        if (len < 1 || len > x.dim(1)) {
            throw ContractError(std::string(op) + ": every example needs at least one valid position");
        }
    }
}

}  // namespace

EncodedBatch encode_text(const ModelState& state, const HardTemplate& tmpl,
                         std::span<const std::vector<Index>> inputs) {
    const ModelConfig& cfg = state.config;
    for (Index t : tmpl.tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw VocabError("encode_text: template token " + std::to_string(t) + " outside vocabulary");
        }
    }
    EncodedBatch batch;
    std::vector<Tensor> rows;
    rows.reserve(inputs.size());
    for (const auto& raw : inputs) {
        for (Index t : raw) {
            if (t < 0 || t >= cfg.vocab_size) {
                throw VocabError("encode_text: token " + std::to_string(t) + " outside vocabulary of " +
                                 std::to_string(cfg.vocab_size));
            }
        }
        TokenizedExample tok = tokenize(raw, cfg.max_seq_len, tmpl, cfg.pad_token_id, cfg.mask_token_id);
        batch.mask_positions.push_back(tok.mask_pos);
        batch.valid_lens.push_back(tok.valid_len);
        rows.push_back(add(gather_rows(state.token_embedding, tok.ids), state.pos_embedding));
    }
    Tensor x = stack_axis0(rows);
    for (const auto& layer : state.frozen_layers) {
        x = encoder_layer_forward(layer, x, batch.valid_lens);
    }
    batch.e_se = x;
    return batch;
}

Tensor sem_encode(const ModelState& state, const Tensor& e_se, const std::vector<Index>& valid_lens) {
    if (e_se.ndim() != 3 || e_se.dim(2) != state.config.embed_dim) {
        throw ShapeError("sem_encode: expected (b, o, d) with d=" +
                         std::to_string(state.config.embed_dim) + ", got " + shape_str(e_se.shape()));
    }
    check_valid_lens("sem_encode", e_se, valid_lens);
    return encoder_layer_forward(state.sem_encoder, e_se, valid_lens);
}

namespace {

// cross-attention + feed-forward with an explicit query block per example;
// residual lands on the query source
Tensor decoder_layer_body(const TransformerLayer& L, const std::vector<Tensor>& queries,
                          const Tensor& query_source, const Tensor& h_se,
                          const std::vector<Index>& valid_lens) {
    const Index o = h_se.dim(1), d = h_se.dim(2);
    const Index b = h_se.dim(0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor k = matmul(h_se, L.wk);
    Tensor v = matmul(h_se, L.wv);
    std::vector<Tensor> per_example;
    per_example.reserve(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) {
        const Index valid = valid_lens[static_cast<std::size_t>(i)];
        const Tensor& qi = queries[static_cast<std::size_t>(i)];
        Tensor scores = scale(matmul(qi, transpose(slice_axis0(k, i))), inv_sqrt_d);
        scores = add(scores, key_mask_bias(qi.dim(0), o, valid));
        per_example.push_back(matmul(softmax_rows(scores), slice_axis0(v, i)));
    }
    Tensor attn_out = matmul(stack_axis0(per_example), L.wo);
    Tensor z1 = layer_norm(add(query_source, attn_out), L.ln1_g, L.ln1_b);
    Tensor f = add_bias(matmul(tanh(add_bias(matmul(z1, L.ff1_w), L.ff1_b)), L.ff2_w), L.ff2_b);
    return layer_norm(add(z1, f), L.ln2_g, L.ln2_b);
}

}  // namespace

Tensor gen_decode(const ModelState& state, const Tensor& prompt, const Tensor& h_se,
                  const std::vector<Index>& valid_lens) {
    const Index d = state.config.embed_dim;
    if (prompt.ndim() != 2 || prompt.dim(1) != d) {
        throw ShapeError("gen_decode: prompt " + shape_str(prompt.shape()) +
                         " does not match embed_dim " + std::to_string(d));
    }
    if (h_se.ndim() != 3 || h_se.dim(2) != d) {
        throw ShapeError("gen_decode: expected (b, o, d), got " + shape_str(h_se.shape()));
    }
    check_valid_lens("gen_decode", h_se, valid_lens);
    const Index b = h_se.dim(0);
    Tensor q = matmul(prompt, state.gen_decoder.wq);  // one prompt, shared by the batch
    std::vector<Tensor> queries(static_cast<std::size_t>(b), q);
    std::vector<Tensor> source_parts(static_cast<std::size_t>(b), prompt);
    Tensor query_source = stack_axis0(source_parts);  // (b, l, d)
    return decoder_layer_body(state.gen_decoder, queries, query_source, h_se, valid_lens);
}

Tensor pool_prompt(const Tensor& h_sp) { return mean_axis1(h_sp); }

VerbalizeOut verbalize(const ModelState& state, const Tensor& h_se,
                       const std::vector<Index>& mask_positions) {
    Tensor mask_states = take_positions(h_se, mask_positions);
    VerbalizeOut out;
    out.vocab_logits = matmul(mask_states, state.token_embedding_t);
    out.label_logits = gather_cols(out.vocab_logits, state.config.label_word_ids);
    return out;
}

Tensor init_soft_prompt(InitStrategy strategy, const ModelConfig& config,
                        const Tensor& token_embedding, const FewShotTask& task,
                        std::uint64_t seed) {
    const Index l = config.prompt_len;
    const Index d = config.embed_dim;
    Rng rng = Rng(seed).split(kTagPrompt);
    NoTapeScope no_tape;
    switch (strategy) {
        case InitStrategy::Random:
            return Tensor::randn({l, d}, rng, 0.02);
        case InitStrategy::Label: {
            std::vector<Index> ids(static_cast<std::size_t>(l));
            const Index c = static_cast<Index>(config.label_word_ids.size());
            for (Index r = 0; r < l; ++r) {
                ids[static_cast<std::size_t>(r)] = config.label_word_ids[static_cast<std::size_t>(r % c)];
            }
            return gather_rows(token_embedding, ids);
        }
        case InitStrategy::Vocab: {
            std::vector<Index> ids(static_cast<std::size_t>(l));
            for (auto& id : ids) id = static_cast<Index>(rng.uniform_int(config.vocab_size));
            return gather_rows(token_embedding, ids);
        }
        case InitStrategy::Top1k: {
            std::map<Index, Index> counts;
            auto count_split = [&counts](const std::vector<LabeledExample>& split) {
                for (const auto& ex : split) {
                    for (Index t : ex.tokens) ++counts[t];
                }
            };
            count_split(task.train);
            count_split(task.dev);
            count_split(task.test);
            if (counts.empty()) throw ContractError("init_soft_prompt: empty task corpus");
            std::vector<std::pair<Index, Index>> freq(counts.begin(), counts.end());
            std::sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) {
                return a.second != b.second ? a.second > b.second : a.first < b.first;
            });
            const std::size_t keep =
                std::min<std::size_t>(freq.size(), static_cast<std::size_t>(
                                                       std::min<Index>(1000, config.vocab_size)));
            std::vector<Index> ids(static_cast<std::size_t>(l));
            for (auto& id : ids) id = freq[rng.uniform_int(keep)].first;
            return gather_rows(token_embedding, ids);
        }
        case InitStrategy::Task: {
            if (task.train.empty()) {
                throw ContractError("init_soft_prompt: Task strategy needs a training split");
            }
            std::set<Index> distinct;
            for (const auto& ex : task.train) distinct.insert(ex.tokens.begin(), ex.tokens.end());
            std::vector<Index> pool(distinct.begin(), distinct.end());
            std::vector<Index> ids(static_cast<std::size_t>(l));
            for (auto& id : ids) id = pool[rng.uniform_int(pool.size())];
            return gather_rows(token_embedding, ids);
        }
    }
    throw ContractError("init_soft_prompt: unknown strategy");
}

ForwardOut forward(const ModelState& state, const EncodedBatch& batch, Variant variant) {
    const Index d = state.config.embed_dim;
    const Index l = state.config.prompt_len;
    ForwardOut out;
    switch (variant) {
        case Variant::Full:
        case Variant::WithoutHP: {
            Tensor h_se = sem_encode(state, batch.e_se, batch.valid_lens);
            VerbalizeOut vb = verbalize(state, h_se, batch.mask_positions);
            out.label_logits = vb.label_logits;
            out.vocab_logits = vb.vocab_logits;
            Tensor h_sp = gen_decode(state, state.soft_prompt, h_se, batch.valid_lens);
            out.pooled_prompt = pool_prompt(h_sp);
            return out;
        }
        case Variant::WithoutCL: {
            Tensor h_se = sem_encode(state, batch.e_se, batch.valid_lens);
            VerbalizeOut vb = verbalize(state, h_se, batch.mask_positions);
            out.label_logits = vb.label_logits;
            out.vocab_logits = vb.vocab_logits;
            return out;
        }
        case Variant::WithoutGD: {
            // hybrid prompting: the soft prompt joins the input sequence
            const Index b = batch.batch();
            const Index o = batch.e_se.dim(1);
            std::vector<Tensor> parts;
            parts.reserve(static_cast<std::size_t>(b));
            for (Index i = 0; i < b; ++i) {
                parts.push_back(concat_rows(state.soft_prompt, slice_axis0(batch.e_se, i)));
            }
            Tensor x = stack_axis0(parts);  // (b, l+o, d)
            std::vector<Index> lens(batch.valid_lens);
            std::vector<Index> masks(batch.mask_positions);
            for (auto& len : lens) len += l;
            for (auto& m : masks) m += l;
            Tensor h_se = sem_encode(state, x, lens);
            VerbalizeOut vb = verbalize(state, h_se, masks);
            out.label_logits = vb.label_logits;
            out.vocab_logits = vb.vocab_logits;
            // CL head pools the soft-prompt positions of the encoder output
            Tensor pool_w({1, l + o});
            pool_w.matrix().leftCols(l).setConstant(1.0 / static_cast<double>(l));
            std::vector<Tensor> pooled;
            pooled.reserve(static_cast<std::size_t>(b));
            for (Index i = 0; i < b; ++i) {
                pooled.push_back(matmul(pool_w, slice_axis0(h_se, i)));
            }
            out.pooled_prompt = reshape(stack_axis0(pooled), {b, d});
            return out;
        }
        case Variant::WithoutSP: {
            Tensor h_se = sem_encode(state, batch.e_se, batch.valid_lens);
            VerbalizeOut vb = verbalize(state, h_se, batch.mask_positions);
            out.label_logits = vb.label_logits;
            out.vocab_logits = vb.vocab_logits;
            // decoder runs with the contextual states as their own queries
            const Index b = batch.batch();
            const Index o = batch.e_se.dim(1);
            Tensor q = matmul(h_se, state.gen_decoder.wq);
            std::vector<Tensor> queries;
            queries.reserve(static_cast<std::size_t>(b));
            for (Index i = 0; i < b; ++i) queries.push_back(slice_axis0(q, i));
            Tensor h_dec =
                decoder_layer_body(state.gen_decoder, queries, h_se, h_se, batch.valid_lens);
            std::vector<Tensor> pooled;
            pooled.reserve(static_cast<std::size_t>(b));
            for (Index i = 0; i < b; ++i) {
                const Index valid = batch.valid_lens[static_cast<std::size_t>(i)];
                Tensor pool_w({1, o});
                pool_w.matrix().leftCols(valid).setConstant(1.0 / static_cast<double>(valid));
                pooled.push_back(matmul(pool_w, slice_axis0(h_dec, i)));
            }
            out.pooled_prompt = reshape(stack_axis0(pooled), {b, d});
            return out;
        }
    }
    throw ContractError("forward: unknown variant");
}

Tensor forward_label_logits(const ModelState& state, const EncodedBatch& batch, Variant variant) {
    if (variant == Variant::WithoutGD) {
        const Index b = batch.batch();
        const Index l = state.config.prompt_len;
        std::vector<Tensor> parts;
        parts.reserve(static_cast<std::size_t>(b));
        for (Index i = 0; i < b; ++i) {
            parts.push_back(concat_rows(state.soft_prompt, slice_axis0(batch.e_se, i)));
        }
        Tensor x = stack_axis0(parts);
        std::vector<Index> lens(batch.valid_lens);
        std::vector<Index> masks(batch.mask_positions);
        for (auto& len : lens) len += l;
        for (auto& m : masks) m += l;
        return verbalize(state, sem_encode(state, x, lens), masks).label_logits;
    }
    Tensor h_se = sem_encode(state, batch.e_se, batch.valid_lens);
    return verbalize(state, h_se, batch.mask_positions).label_logits;
}

std::vector<Index> predict(const Tensor& label_logits) {
    if (label_logits.ndim() != 2) {
        throw ShapeError("predict: expected (b, num_classes), got " + shape_str(label_logits.shape()));
    }
    const Index b = label_logits.dim(0), c = label_logits.dim(1);
    std::vector<Index> out(static_cast<std::size_t>(b));
    auto m = label_logits.matrix();
    for (Index i = 0; i < b; ++i) {
        Index best = 0;
        for (Index j = 1; j < c; ++j) {
            if (m(i, j) > m(i, best)) best = j;
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

namespace {

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"vocab_size", c.vocab_size},
                       {"max_seq_len", c.max_seq_len},
                       {"embed_dim", c.embed_dim},
                       {"prompt_len", c.prompt_len},
                       {"frozen_depth", c.frozen_depth},
                       {"num_classes", c.num_classes},
                       {"mask_token_id", c.mask_token_id},
                       {"pad_token_id", c.pad_token_id},
                       {"temperature", c.temperature},
                       {"label_word_ids", c.label_word_ids}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.vocab_size = j.at("vocab_size").get<Index>();
    c.max_seq_len = j.at("max_seq_len").get<Index>();
    c.embed_dim = j.at("embed_dim").get<Index>();
    c.prompt_len = j.at("prompt_len").get<Index>();
    c.frozen_depth = j.at("frozen_depth").get<Index>();
    c.num_classes = j.at("num_classes").get<Index>();
    c.mask_token_id = j.at("mask_token_id").get<Index>();
    c.pad_token_id = j.at("pad_token_id").get<Index>();
    c.temperature = j.at("temperature").get<double>();
    c.label_word_ids = j.at("label_word_ids").get<std::vector<Index>>();
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    to_json(j, c);
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    from_json(j, c);
    return c;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ContractError("save_checkpoint: cannot open " + path);
    nlohmann::json header{{"schema_version", 1},
                          {"kind", "stablept-checkpoint"},
                          {"backbone_seed", state.backbone_seed}};
    header["config"] = model_config_to_json(state.config);
    out << header.dump() << "\n";
    auto dump_params = [&out](std::vector<std::pair<std::string, Tensor>> params) {
        for (auto& [name, t] : params) {
            nlohmann::json line{{"name", name}, {"shape", t.shape()}};
            std::vector<double> data(t.values().data(), t.values().data() + t.numel());
            line["data"] = data;
            out << line.dump() << "\n";
        }
    };
    dump_params(state.frozen_params());
    dump_params(state.trainable_params());
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ContractError("load_checkpoint: empty file " + path);
    auto header = nlohmann::json::parse(line);
    if (header.value("kind", "") != "stablept-checkpoint" || header.value("schema_version", 0) != 1) {
        throw ContractError("load_checkpoint: unrecognized checkpoint header in " + path);
    }
    ModelConfig config = model_config_from_json(header.at("config"));
    ModelState state = ModelState::init(config, header.at("backbone_seed").get<std::uint64_t>());

    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : state.frozen_params()) by_name.emplace(name, t);
    for (auto& [name, t] : state.trainable_params()) by_name.emplace(name, t);

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        const std::string name = j.at("name").get<std::string>();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ContractError("load_checkpoint: unknown parameter " + name);
        const auto data = j.at("data").get<std::vector<double>>();
        Tensor t = it->second;
        if (static_cast<Index>(data.size()) != t.numel()) {
            throw ShapeError("load_checkpoint: size mismatch for " + name);
        }
        for (Index i = 0; i < t.numel(); ++i) t.values()[i] = data[static_cast<std::size_t>(i)];
    }
    state.token_embedding_t = transpose_value(state.token_embedding);
    return state;
}

}  // namespace stablept

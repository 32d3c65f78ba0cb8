#include "stablept/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "stablept/losses.hpp"
#include "stablept/ops.hpp"

namespace stablept {

namespace {
enum RngTag : std::uint64_t { kTagShuffle = 30 };
constexpr Index kEvalChunk = 64;
}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) throw ContractError("train config: epochs must be >= 0");
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
    if (variant != Variant::WithoutCL && batch_size < 2) {
        throw ContractError("train config: batch_size must be >= 2 while the CL loss is active");
    }
    if (learning_rate < 0.0) throw ContractError("train config: negative learning rate");
    if (weight_decay < 0.0) throw ContractError("train config: negative weight decay");
    if (tau <= 0.0) throw ContractError("train config: tau must be positive");
}

nlohmann::json RunHistory::to_json(bool include_wall_time) const {
    nlohmann::json epochs_json = nlohmann::json::array();
    for (const auto& e : epochs) {
        epochs_json.push_back({{"l_total", e.l_total},
                               {"l_mlm", e.l_mlm},
                               {"l_cl", e.l_cl},
                               {"dev_accuracy", e.dev_accuracy}});
    }
    nlohmann::json j{{"schema_version", 1},
                     {"epochs", std::move(epochs_json)},
                     {"selected_epoch", selected_epoch},
                     {"test_accuracy", test_accuracy}};
    if (include_wall_time) j["wall_time_ms"] = wall_time_ms;
    return j;
}

std::string RunHistory::to_json_string(bool include_wall_time) const {
    return to_json(include_wall_time).dump();
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, Config config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_) {
        (void)name;
        m_.push_back(Eigen::ArrayXd::Zero(p.numel()));
        v_.push_back(Eigen::ArrayXd::Zero(p.numel()));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor p = params_[i].second;
        const Eigen::ArrayXd& g = p.grad();
        if (!g.allFinite()) {
            throw NumericError("adamw: non-finite gradient in " + params_[i].first);
        }
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.square();
        p.values() *= (1.0 - config_.lr * config_.weight_decay);
        p.values() -= config_.lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + config_.eps);
    }
}

EncodedTask encode_task(const ModelState& state, const FewShotTask& task,
                        const HardTemplate& tmpl) {
    auto encode_split = [&](const std::vector<LabeledExample>& split) {
        EncodedSplit out;
        std::vector<std::vector<Index>> inputs;
        inputs.reserve(split.size());
        for (const auto& ex : split) {
            inputs.push_back(ex.tokens);
            out.labels.push_back(ex.label);
        }
        EncodedBatch enc = encode_text(state, tmpl, inputs);
        out.mask_positions = enc.mask_positions;
        out.valid_lens = enc.valid_lens;
        out.e_se.reserve(split.size());
        for (Index i = 0; i < enc.batch(); ++i) {
            out.e_se.push_back(slice_axis0(enc.e_se, i));
        }
        return out;
    };
    EncodedTask out;
    out.template_id = tmpl.id;
    out.train = encode_split(task.train);
    out.dev = encode_split(task.dev);
    out.test = encode_split(task.test);
    return out;
}

BatchView make_batch(const EncodedSplit& split, std::span<const Index> idxs) {
    BatchView view;
    std::vector<Tensor> parts;
    parts.reserve(idxs.size());
    for (Index idx : idxs) {
        const auto i = static_cast<std::size_t>(idx);
        parts.push_back(split.e_se[i]);
        view.enc.mask_positions.push_back(split.mask_positions[i]);
        view.enc.valid_lens.push_back(split.valid_lens[i]);
        view.labels.push_back(split.labels[i]);
    }
    view.enc.e_se = stack_axis0(parts);
    return view;
}

double evaluate(const ModelState& state, const EncodedSplit& split, Variant variant) {
    if (split.size() == 0) throw ContractError("evaluate: empty example set");
    NoTapeScope no_tape;
    const Index n = static_cast<Index>(split.size());
    Index correct = 0;
    for (Index start = 0; start < n; start += kEvalChunk) {
        const Index stop = std::min(n, start + kEvalChunk);
        std::vector<Index> idxs(static_cast<std::size_t>(stop - start));
        std::iota(idxs.begin(), idxs.end(), start);
        BatchView batch = make_batch(split, idxs);
        std::vector<Index> pred = predict(forward_label_logits(state, batch.enc, variant));
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == batch.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double evaluate(const ModelState& state, std::span<const LabeledExample> examples,
                const HardTemplate& tmpl, Variant variant) {
    if (examples.empty()) throw ContractError("evaluate: empty example set");
    EncodedSplit split;
    std::vector<std::vector<Index>> inputs;
    inputs.reserve(examples.size());
    for (const auto& ex : examples) {
        inputs.push_back(ex.tokens);
        split.labels.push_back(ex.label);
    }
    EncodedBatch enc = encode_text(state, tmpl, inputs);
    split.mask_positions = enc.mask_positions;
    split.valid_lens = enc.valid_lens;
    for (Index i = 0; i < enc.batch(); ++i) split.e_se.push_back(slice_axis0(enc.e_se, i));
    return evaluate(state, split, variant);
}

TrainResult train(const ModelState& base, const FewShotTask& task, const TrainConfig& cfg,
                  const HardTemplate& tmpl, const EncodedTask* cache) {
    cfg.validate();
    if (task.train.empty()) throw ContractError("train: empty training split");

    const auto t0 = std::chrono::steady_clock::now();
    ModelState state = base.clone();
    state.reinit_trainable(cfg.seed, cfg.init_strategy, task);

    const HardTemplate effective = cfg.variant == Variant::WithoutHP ? bare_mask_template() : tmpl;
    EncodedTask local;
    if (cache) {
        if (cache->template_id != effective.id) {
            throw ContractError("train: cache was built for template " +
                                std::to_string(cache->template_id) + ", run uses " +
                                std::to_string(effective.id));
        }
    } else {
        local = encode_task(state, task, effective);
        cache = &local;
    }

    AdamW optimizer(state.trainable_params(),
                    {cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps});
    Rng shuffle_rng = Rng(cfg.seed).split(kTagShuffle);

    RunHistory history;
    ModelState best;
    double best_acc = -1.0;
    Index best_epoch = -1;

    const Index n = static_cast<Index>(cache->train.size());
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});

    for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double sum_total = 0.0, sum_mlm = 0.0, sum_cl = 0.0;
        Index batches = 0;
        for (Index start = 0; start < n; start += cfg.batch_size) {
            const Index stop = std::min(n, start + cfg.batch_size);
            std::span<const Index> idxs(order.data() + start, static_cast<std::size_t>(stop - start));
            BatchView batch = make_batch(cache->train, idxs);

            Tape tape;
            ForwardOut out = forward(state, batch.enc, cfg.variant);
            Tensor l_cl;
            if (out.pooled_prompt && batch.enc.batch() >= 2) {
                l_cl = supcon_loss(*out.pooled_prompt, batch.labels, cfg.tau);
            }
            Tensor l_mlm = mlm_loss(out.vocab_logits, batch.labels, state.config.label_word_ids);
            LossBundle bundle = total_loss(l_mlm, l_cl);
            tape.backward(bundle.total);
            optimizer.step();
            state.zero_grad();

            sum_total += bundle.total.value();
            sum_mlm += bundle.mlm.value();
            sum_cl += bundle.cl.value();
            ++batches;
        }
        EpochStats stats;
        stats.l_total = sum_total / static_cast<double>(batches);
        stats.l_mlm = sum_mlm / static_cast<double>(batches);
        stats.l_cl = sum_cl / static_cast<double>(batches);
        stats.dev_accuracy = evaluate(state, cache->dev, cfg.variant);
        history.epochs.push_back(stats);
        if (stats.dev_accuracy > best_acc) {
            best_acc = stats.dev_accuracy;
            best_epoch = epoch;
            best = state.clone();
        }
    }

    TrainResult result;
    result.state = best_epoch >= 0 ? std::move(best) : std::move(state);
    history.selected_epoch = best_epoch;
    history.test_accuracy = evaluate(result.state, cache->test, cfg.variant);
    history.wall_time_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
    result.history = std::move(history);
    return result;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"learning_rate", c.learning_rate},
                          {"weight_decay", c.weight_decay},
                          {"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"beta1", c.beta1},
                          {"beta2", c.beta2},
                          {"adam_eps", c.adam_eps},
                          {"seed", c.seed},
                          {"variant", variant_name(c.variant)},
                          {"init_strategy", strategy_name(c.init_strategy)},
                          {"tau", c.tau},
                          {"template_index", c.template_index}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("init_strategy")) {
        c.init_strategy = strategy_from_name(j.at("init_strategy").get<std::string>());
    }
    c.tau = j.value("tau", c.tau);
    c.template_index = j.value("template_index", c.template_index);
    return c;
}

}  // namespace stablept

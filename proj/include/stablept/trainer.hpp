#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stablept/model.hpp"

namespace stablept {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    Index epochs = 100;
    Index batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    Variant variant = Variant::Full;
    InitStrategy init_strategy = InitStrategy::Random;
    double tau = 0.1;
    Index template_index = 0;  // which task template the harness picks

    void validate() const;
};

struct EpochStats {
    double l_total = 0.0;
    double l_mlm = 0.0;
    double l_cl = 0.0;
    double dev_accuracy = 0.0;
};

struct RunHistory {
    std::vector<EpochStats> epochs;
    Index selected_epoch = -1;  // argmax dev accuracy, ties -> earliest
    double test_accuracy = 0.0;
    double wall_time_ms = 0.0;

    // wall time is the one nondeterministic field; exclude it when comparing
    // runs for reproducibility
    nlohmann::json to_json(bool include_wall_time = true) const;
    std::string to_json_string(bool include_wall_time = true) const;
};

// AdamW with decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p (1 - lr wd);    p <- p - lr mhat / (sqrt(vhat) + eps)
class AdamW {
public:
    struct Config {
        double lr = 1e-4;
        double weight_decay = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamW(std::vector<std::pair<std::string, Tensor>> params, Config config);
    void step();
    Index step_count() const { return t_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    Config config_;
    std::vector<Eigen::ArrayXd> m_, v_;
    Index t_ = 0;
};

// Frozen-encoder activations for one split, one tensor per example so batches
// can be assembled by stacking.
struct EncodedSplit {
    std::vector<Tensor> e_se;  // (o, d) each
    std::vector<Index> mask_positions;
    std::vector<Index> valid_lens;
    std::vector<Index> labels;
    std::size_t size() const { return e_se.size(); }
};

struct EncodedTask {
    EncodedSplit train, dev, test;
    Index template_id = 0;
};

// Runs the frozen path once for every example of every split. The result is
// immutable and may be shared read-only across concurrent train() calls.
EncodedTask encode_task(const ModelState& state, const FewShotTask& task, const HardTemplate& tmpl);

struct BatchView {
    EncodedBatch enc;
    std::vector<Index> labels;
};
BatchView make_batch(const EncodedSplit& split, std::span<const Index> idxs);

struct TrainResult {
    ModelState state;  // dev-best checkpoint
    RunHistory history;
};

// Training loop: trainable groups freshly initialized from cfg.seed, then
// epochs of shuffled mini-batches with a dev evaluation after each epoch;
// the dev-best state is returned. `cache`, when given, must hold activations
// for the template this run effectively uses (bare mask for WithoutHP).
TrainResult train(const ModelState& base, const FewShotTask& task, const TrainConfig& cfg,
                  const HardTemplate& tmpl, const EncodedTask* cache = nullptr);

double evaluate(const ModelState& state, const EncodedSplit& split, Variant variant);
double evaluate(const ModelState& state, std::span<const LabeledExample> examples,
                const HardTemplate& tmpl, Variant variant);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace stablept

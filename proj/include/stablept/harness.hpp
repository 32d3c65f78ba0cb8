#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stablept/metrics.hpp"
#include "stablept/model.hpp"
#include "stablept/trainer.hpp"

namespace stablept {

inline constexpr const char* kLibraryVersion = "0.1.0";

// Cross product of the non-empty grid axes below; every cell is an
// independent training run.
struct ExperimentPlan {
    // task
    Index num_classes = 2;
    double noise_level = 0.0;
    std::uint64_t task_seed = 1;
    Index test_size = 512;
    // grids
    std::vector<Variant> variants;
    std::vector<InitStrategy> strategies;
    std::vector<Index> template_ids;
    std::vector<Index> prompt_lengths;
    std::vector<std::uint64_t> seeds;
    // shared configuration
    ModelConfig model;
    TrainConfig train;
    std::uint64_t backbone_seed = 7;
    std::uint64_t template_style_seed = 11;
    std::string out_dir = ".";
    int workers = 1;

    // splittable per-run seeds derived from a master seed
    static std::vector<std::uint64_t> make_seeds(std::uint64_t master, Index count);
};

nlohmann::json plan_to_json(const ExperimentPlan& plan);
ExperimentPlan plan_from_json(const nlohmann::json& j);

struct RawRow {
    std::string variant;
    std::string strategy;
    Index template_id = 0;
    Index prompt_len = 0;
    std::uint64_t seed = 0;
    double test_accuracy = 0.0;  // quantized to 6 decimals
    Index selected_epoch = -1;
    double wall_time_ms = 0.0;
};

struct AggRow {
    std::string group;
    double mean = 0.0;
    double stddev = 0.0;
};

struct ResultsTable {
    std::vector<RawRow> raw;
    std::vector<AggRow> aggregates;
    std::string manifest_json;  // full plan + library version

    const AggRow& find_agg(const std::string& group) const;
};

// One plan cell; unset axes take the plan's train-config values.
struct PlanCell {
    Variant variant = Variant::Full;
    InitStrategy strategy = InitStrategy::Random;
    Index template_id = 0;
    Index prompt_len = 10;
    std::uint64_t seed = 0;
};

// Runs cells[order[0]], cells[order[1]], ... over `workers` threads; results
// land at their cell index, so execution order never changes the table.
std::vector<RawRow> run_cells(const ExperimentPlan& plan, std::span<const PlanCell> cells,
                              std::span<const std::size_t> order = {});

// Soft-prompt initialization stability: (variant x strategy) grid over seeds,
// one fixed task instance; per-variant spread across strategy means.
ResultsTable run_stability_soft(const ExperimentPlan& plan);
// Hard-prompt stability: (variant x template) grid, soft init fixed to Random.
ResultsTable run_stability_hard(const ExperimentPlan& plan);
// All five variants over seeds on one task.
ResultsTable run_ablation(const ExperimentPlan& plan);
// Prompt-length sweep, full variant.
ResultsTable run_length_sweep(const ExperimentPlan& plan);

// RFC-4180 CSV with a single header; aggregate rows carry kind=agg. A sibling
// <path>.manifest.json holds the plan.
void emit_csv(const ResultsTable& table, const std::string& path);
ResultsTable read_csv(const std::string& path);

// mean/std recomputation used for both aggregation and its invariant check
AccuracyStats aggregate_accuracy(const std::vector<const RawRow*>& rows);

}  // namespace stablept

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stablept/harness.hpp"

using namespace stablept;

namespace {

// a deliberately small but real plan so harness tests stay quick
ExperimentPlan quick_plan() {
    ExperimentPlan plan;
    plan.noise_level = 0.0;
    plan.task_seed = 31;
    plan.model.max_seq_len = 12;
    plan.model.embed_dim = 16;
    plan.model.frozen_depth = 1;
    plan.model.prompt_len = 5;
    plan.train.epochs = 2;
    plan.train.learning_rate = 1e-3;
    plan.seeds = {1, 2};
    plan.variants = {Variant::Full, Variant::WithoutGD};
    plan.strategies = {InitStrategy::Random, InitStrategy::Label, InitStrategy::Vocab,
                       InitStrategy::Top1k, InitStrategy::Task};
    plan.template_ids = {0, 1, 2, 3, 4, 5};
    plan.prompt_lengths = {5, 10};
    plan.workers = 2;
    return plan;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("stability-soft cardinality and aggregate consistency") {
    ExperimentPlan plan = quick_plan();
    ResultsTable table = run_stability_soft(plan);
    CHECK(table.raw.size() == plan.variants.size() * plan.strategies.size() * plan.seeds.size());

    // every aggregate is recomputable from the raw rows
    for (Variant v : plan.variants) {
        std::vector<double> means;
        for (InitStrategy s : plan.strategies) {
            std::vector<const RawRow*> rows;
            for (const RawRow& r : table.raw) {
                if (r.variant == variant_name(v) && r.strategy == strategy_name(s)) {
                    rows.push_back(&r);
                }
            }
            CHECK(rows.size() == plan.seeds.size());
            AccuracyStats stats = aggregate_accuracy(rows);
            const AggRow& agg = table.find_agg(std::string("variant=") + variant_name(v) +
                                               "|strategy=" + strategy_name(s));
            CHECK(std::abs(agg.mean - stats.mean) < 1e-12);
            CHECK(std::abs(agg.stddev - stats.stddev) < 1e-12);
            means.push_back(stats.mean);
        }
        const AggRow& across = table.find_agg(std::string("variant=") + variant_name(v) +
                                              "|across=strategies");
        AccuracyStats spread = accuracy_stats(means);
        CHECK(std::abs(across.stddev - spread.stddev) < 1e-12);
    }
}

TEST_CASE("stability-soft validates its variant precondition") {
    ExperimentPlan plan = quick_plan();
    plan.variants = {Variant::Full};
    CHECK_THROWS_AS(run_stability_soft(plan), ContractError);
}

TEST_CASE("stability-hard cardinality and template-spread aggregates") {
    ExperimentPlan plan = quick_plan();
    plan.seeds = {1};
    ResultsTable table = run_stability_hard(plan);
    CHECK(table.raw.size() == plan.variants.size() * plan.template_ids.size() * plan.seeds.size());
    for (const RawRow& r : table.raw) CHECK(r.strategy == "Random");
    CHECK_NOTHROW(table.find_agg("variant=full|across=templates"));
    CHECK_NOTHROW(table.find_agg("variant=wo_gd|across=templates"));

    ExperimentPlan bad = plan;
    bad.template_ids = {0, 1, 2};
    CHECK_THROWS_AS(run_stability_hard(bad), ContractError);
}

TEST_CASE("ablation runs exactly the five variants") {
    ExperimentPlan plan = quick_plan();
    plan.variants = {Variant::Full, Variant::WithoutCL, Variant::WithoutGD, Variant::WithoutSP,
                     Variant::WithoutHP};
    ResultsTable table = run_ablation(plan);
    CHECK(table.raw.size() == 5 * plan.seeds.size());
    for (Variant v : plan.variants) {
        CHECK_NOTHROW(table.find_agg(std::string("variant=") + variant_name(v)));
    }

    ExperimentPlan missing = plan;
    missing.variants.pop_back();
    CHECK_THROWS_AS(run_ablation(missing), ContractError);
}

TEST_CASE("length sweep accepts only the pinned grid") {
    ExperimentPlan plan = quick_plan();
    plan.seeds = {1};
    ResultsTable table = run_length_sweep(plan);
    CHECK(table.raw.size() == plan.prompt_lengths.size());
    for (const RawRow& r : table.raw) CHECK(r.variant == "full");

    ExperimentPlan bad = plan;
    bad.prompt_lengths = {7};
    CHECK_THROWS_AS(run_length_sweep(bad), ContractError);
    bad.prompt_lengths = {};
    CHECK_THROWS_AS(run_length_sweep(bad), ContractError);
}

TEST_CASE("plan cells are order independent") {
    ExperimentPlan plan = quick_plan();
    plan.workers = 1;
    std::vector<PlanCell> cells;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        for (Variant v : {Variant::Full, Variant::WithoutGD}) {
            PlanCell c;
            c.variant = v;
            c.strategy = InitStrategy::Random;
            c.template_id = 0;
            c.prompt_len = 5;
            c.seed = seed;
            cells.push_back(c);
        }
    }
    std::vector<std::size_t> order(cells.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<RawRow> forward_rows = run_cells(plan, cells, order);
    std::reverse(order.begin(), order.end());
    std::vector<RawRow> reversed_rows = run_cells(plan, cells, order);
    REQUIRE(forward_rows.size() == reversed_rows.size());
    for (std::size_t i = 0; i < forward_rows.size(); ++i) {
        CHECK(forward_rows[i].test_accuracy == reversed_rows[i].test_accuracy);
        CHECK(forward_rows[i].selected_epoch == reversed_rows[i].selected_epoch);
        CHECK(forward_rows[i].seed == reversed_rows[i].seed);
    }
}

TEST_CASE("every raw row is reproducible from the manifest alone") {
    ExperimentPlan plan = quick_plan();
    plan.seeds = {5, 6};
    ResultsTable table = run_stability_soft(plan);
    const RawRow& probe = table.raw[3];

    ExperimentPlan rebuilt = plan_from_json(nlohmann::json::parse(table.manifest_json));
    PlanCell cell;
    cell.variant = variant_from_name(probe.variant);
    cell.strategy = strategy_from_name(probe.strategy);
    cell.template_id = probe.template_id;
    cell.prompt_len = probe.prompt_len;
    cell.seed = probe.seed;
    std::vector<RawRow> rows = run_cells(rebuilt, std::vector<PlanCell>{cell});
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].test_accuracy == probe.test_accuracy);
    CHECK(rows[0].selected_epoch == probe.selected_epoch);
}

TEST_CASE("csv emission: header-only empty table, byte-identical re-emission, exact round trip") {
    ResultsTable empty;
    empty.manifest_json = plan_to_json(quick_plan()).dump(2);
    const std::string p0 = "/tmp/stablept_empty.csv";
    emit_csv(empty, p0);
    CHECK(slurp(p0) ==
          "kind,variant,strategy,template_id,prompt_len,seed,test_accuracy,selected_epoch,"
          "wall_time_ms,group,mean,std\n");

    ExperimentPlan plan = quick_plan();
    plan.seeds = {1};
    plan.strategies = {InitStrategy::Random, InitStrategy::Label};
    ResultsTable table = run_stability_soft(plan);
    const std::string p1 = "/tmp/stablept_table1.csv";
    const std::string p2 = "/tmp/stablept_table2.csv";
    emit_csv(table, p1);
    emit_csv(table, p2);
    CHECK(slurp(p1) == slurp(p2));

    ResultsTable parsed = read_csv(p1);
    REQUIRE(parsed.raw.size() == table.raw.size());
    for (std::size_t i = 0; i < table.raw.size(); ++i) {
        CHECK(parsed.raw[i].variant == table.raw[i].variant);
        CHECK(parsed.raw[i].strategy == table.raw[i].strategy);
        CHECK(parsed.raw[i].template_id == table.raw[i].template_id);
        CHECK(parsed.raw[i].prompt_len == table.raw[i].prompt_len);
        CHECK(parsed.raw[i].seed == table.raw[i].seed);
        CHECK(parsed.raw[i].test_accuracy == table.raw[i].test_accuracy);
        CHECK(parsed.raw[i].selected_epoch == table.raw[i].selected_epoch);
        CHECK(parsed.raw[i].wall_time_ms == table.raw[i].wall_time_ms);
    }
    REQUIRE(parsed.aggregates.size() == table.aggregates.size());
    for (std::size_t i = 0; i < table.aggregates.size(); ++i) {
        CHECK(parsed.aggregates[i].group == table.aggregates[i].group);
        CHECK(parsed.aggregates[i].mean == table.aggregates[i].mean);
        CHECK(parsed.aggregates[i].stddev == table.aggregates[i].stddev);
    }
    CHECK(parsed.manifest_json == table.manifest_json);

    // emission of the parsed table reproduces the file bytes
    const std::string p3 = "/tmp/stablept_table3.csv";
    emit_csv(parsed, p3);
    CHECK(slurp(p3) == slurp(p1));

    for (const auto& p : {p0, p1, p2, p3}) {
        std::remove(p.c_str());
        std::remove((p + ".manifest.json").c_str());
    }
}

TEST_CASE("plan json round trip preserves every field") {
    ExperimentPlan plan = quick_plan();
    plan.out_dir = "/tmp/x";
    plan.noise_level = 0.15;
    nlohmann::json j = plan_to_json(plan);
    CHECK(j.at("library_version").get<std::string>() == kLibraryVersion);
    ExperimentPlan back = plan_from_json(j);
    CHECK(back.noise_level == plan.noise_level);
    CHECK(back.task_seed == plan.task_seed);
    CHECK(back.variants == plan.variants);
    CHECK(back.strategies == plan.strategies);
    CHECK(back.template_ids == plan.template_ids);
    CHECK(back.prompt_lengths == plan.prompt_lengths);
    CHECK(back.seeds == plan.seeds);
    CHECK(back.model.embed_dim == plan.model.embed_dim);
    CHECK(back.train.epochs == plan.train.epochs);
    CHECK(back.out_dir == plan.out_dir);
    CHECK(back.workers == plan.workers);
}

TEST_CASE("splittable seeds differ per index and reproduce") {
    auto a = ExperimentPlan::make_seeds(9, 8);
    auto b = ExperimentPlan::make_seeds(9, 8);
    CHECK(a == b);
    std::set<std::uint64_t> uniq(a.begin(), a.end());
    CHECK(uniq.size() == a.size());
}

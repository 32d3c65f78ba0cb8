#include "stablept/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace stablept {

std::vector<std::uint64_t> ExperimentPlan::make_seeds(std::uint64_t master, Index count) {
    std::vector<std::uint64_t> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) out.push_back(mix_seed(master, static_cast<std::uint64_t>(i)));
    return out;
}

nlohmann::json plan_to_json(const ExperimentPlan& plan) {
    nlohmann::json j;
    j["num_classes"] = plan.num_classes;
    j["noise_level"] = plan.noise_level;
    j["task_seed"] = plan.task_seed;
    j["test_size"] = plan.test_size;
    std::vector<std::string> variants, strategies;
    for (Variant v : plan.variants) variants.emplace_back(variant_name(v));
    for (InitStrategy s : plan.strategies) strategies.emplace_back(strategy_name(s));
    j["variants"] = variants;
    j["strategies"] = strategies;
    j["template_ids"] = plan.template_ids;
    j["prompt_lengths"] = plan.prompt_lengths;
    j["seeds"] = plan.seeds;
    j["model"] = model_config_to_json(plan.model);
    j["train"] = train_config_to_json(plan.train);
    j["backbone_seed"] = plan.backbone_seed;
    j["template_style_seed"] = plan.template_style_seed;
    j["out_dir"] = plan.out_dir;
    j["workers"] = plan.workers;
    j["library_version"] = kLibraryVersion;
    return j;
}

ExperimentPlan plan_from_json(const nlohmann::json& j) {
    ExperimentPlan plan;
    plan.num_classes = j.value("num_classes", plan.num_classes);
    plan.noise_level = j.value("noise_level", plan.noise_level);
    plan.task_seed = j.value("task_seed", plan.task_seed);
    plan.test_size = j.value("test_size", plan.test_size);
    if (j.contains("variants")) {
        plan.variants.clear();
        for (const auto& name : j.at("variants")) {
            plan.variants.push_back(variant_from_name(name.get<std::string>()));
        }
    }
    if (j.contains("strategies")) {
        plan.strategies.clear();
        for (const auto& name : j.at("strategies")) {
            plan.strategies.push_back(strategy_from_name(name.get<std::string>()));
        }
    }
    if (j.contains("template_ids")) plan.template_ids = j.at("template_ids").get<std::vector<Index>>();
    if (j.contains("prompt_lengths")) {
        plan.prompt_lengths = j.at("prompt_lengths").get<std::vector<Index>>();
    }
    if (j.contains("seeds")) plan.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("model")) plan.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) plan.train = train_config_from_json(j.at("train"));
    plan.backbone_seed = j.value("backbone_seed", plan.backbone_seed);
    plan.template_style_seed = j.value("template_style_seed", plan.template_style_seed);
    plan.out_dir = j.value("out_dir", plan.out_dir);
    plan.workers = j.value("workers", plan.workers);
    return plan;
}

const AggRow& ResultsTable::find_agg(const std::string& group) const {
    for (const auto& row : aggregates) {
        if (row.group == group) return row;
    }
    throw ContractError("results table: no aggregate row named " + group);
}

namespace {

double quantize6(double x) { return std::round(x * 1e6) / 1e6; }
double quantize12(double x) { return std::round(x * 1e12) / 1e12; }
double quantize3(double x) { return std::round(x * 1e3) / 1e3; }

}  // namespace

AccuracyStats aggregate_accuracy(const std::vector<const RawRow*>& rows) {
    if (rows.empty()) throw ContractError("aggregate_accuracy: empty row group");
    if (rows.size() == 1) return {quantize12(rows[0]->test_accuracy), 0.0};
    std::vector<double> acc;
    acc.reserve(rows.size());
    for (const RawRow* r : rows) acc.push_back(r->test_accuracy);
    AccuracyStats stats = accuracy_stats(acc);
    // pinned to the CSV emission precision so parse round-trips are exact
    return {quantize12(stats.mean), quantize12(stats.stddev)};
}

namespace {

void parallel_run(std::size_t count, int workers, std::span<const std::size_t> order,
                  const std::function<void(std::size_t)>& fn) {
    std::vector<std::size_t> identity;
    if (order.empty()) {
        identity.resize(count);
        std::iota(identity.begin(), identity.end(), std::size_t{0});
        order = identity;
    }
    if (order.size() != count) throw ContractError("run_cells: order must cover every cell");
    workers = std::max(1, workers);
    if (workers == 1) {
        for (std::size_t i : order) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t k = next.fetch_add(1);
            if (k >= order.size()) return;
            try {
                fn(order[k]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string group_key(std::initializer_list<std::pair<const char*, std::string>> parts) {
    std::string out;
    for (const auto& [k, v] : parts) {
        if (!out.empty()) out += "|";
        out += std::string(k) + "=" + v;
    }
    return out;
}

}  // namespace

std::vector<RawRow> run_cells(const ExperimentPlan& plan, std::span<const PlanCell> cells,
                              std::span<const std::size_t> order) {
    const FewShotTask task =
        generate_task(plan.num_classes, plan.noise_level, plan.task_seed, plan.test_size);

    Index max_template = 0;
    std::set<Index> prompt_lens;
    for (const PlanCell& cell : cells) {
        max_template = std::max(max_template, cell.template_id);
        prompt_lens.insert(cell.prompt_len);
    }
    const auto templates = build_templates(std::max<Index>(max_template + 1, 6),
                                           plan.template_style_seed);

    // one base state per prompt length; the frozen backbone draws are
    // identical across lengths by stream separation
    std::map<Index, ModelState> bases;
    for (Index l : prompt_lens) {
        ModelConfig mc = plan.model;
        mc.prompt_len = l;
        mc.label_word_ids = task.vocab.label_word_ids;
        mc.num_classes = task.num_classes();
        bases.emplace(l, ModelState::init(mc, plan.backbone_seed));
    }

    // frozen activations per effective template (bare mask for WithoutHP)
    std::map<Index, EncodedTask> caches;
    const ModelState& any_base = bases.begin()->second;
    for (const PlanCell& cell : cells) {
        const HardTemplate effective = cell.variant == Variant::WithoutHP
                                           ? bare_mask_template()
                                           : templates[static_cast<std::size_t>(cell.template_id)];
        if (!caches.count(effective.id)) {
            caches.emplace(effective.id, encode_task(any_base, task, effective));
        }
    }

    std::vector<RawRow> rows(cells.size());
    parallel_run(cells.size(), plan.workers, order, [&](std::size_t i) {
        const PlanCell& cell = cells[i];
        TrainConfig cfg = plan.train;
        cfg.variant = cell.variant;
        cfg.init_strategy = cell.strategy;
        cfg.seed = cell.seed;
        cfg.template_index = cell.template_id;
        const HardTemplate& tmpl = templates[static_cast<std::size_t>(cell.template_id)];
        const HardTemplate effective =
            cell.variant == Variant::WithoutHP ? bare_mask_template() : tmpl;
        const EncodedTask& cache = caches.at(effective.id);
        TrainResult res = train(bases.at(cell.prompt_len), task, cfg, tmpl, &cache);
        RawRow row;
        row.variant = variant_name(cell.variant);
        row.strategy = strategy_name(cell.strategy);
        row.template_id = cell.template_id;
        row.prompt_len = cell.prompt_len;
        row.seed = cell.seed;
        row.test_accuracy = quantize6(res.history.test_accuracy);
        row.selected_epoch = res.history.selected_epoch;
        row.wall_time_ms = quantize3(res.history.wall_time_ms);
        rows[i] = std::move(row);
    });
    return rows;
}

namespace {

void require_full_and_wo_gd(const ExperimentPlan& plan, const char* op) {
    const bool has_full = std::count(plan.variants.begin(), plan.variants.end(), Variant::Full) > 0;
    const bool has_wo_gd =
        std::count(plan.variants.begin(), plan.variants.end(), Variant::WithoutGD) > 0;
    if (plan.variants.size() < 2 || !has_full || !has_wo_gd) {
        throw ContractError(std::string(op) + ": plan needs at least the full and wo_gd variants");
    }
}

ResultsTable finish_table(const ExperimentPlan& plan, std::vector<RawRow> rows) {
    ResultsTable table;
    table.raw = std::move(rows);
    table.manifest_json = plan_to_json(plan).dump(2);
    return table;
}

}  // namespace

ResultsTable run_stability_soft(const ExperimentPlan& plan) {
    require_full_and_wo_gd(plan, "run_stability_soft");
    if (plan.strategies.empty()) throw ContractError("run_stability_soft: no strategies listed");
    if (plan.seeds.empty()) throw ContractError("run_stability_soft: no seeds listed");

    std::vector<PlanCell> cells;
    for (Variant v : plan.variants) {
        for (InitStrategy s : plan.strategies) {
            for (std::uint64_t seed : plan.seeds) {
                PlanCell cell;
                cell.variant = v;
                cell.strategy = s;
                cell.template_id = plan.train.template_index;
                cell.prompt_len = plan.model.prompt_len;
                cell.seed = seed;
                cells.push_back(cell);
            }
        }
    }
    ResultsTable table = finish_table(plan, run_cells(plan, cells));

    for (Variant v : plan.variants) {
        std::vector<double> strategy_means;
        for (InitStrategy s : plan.strategies) {
            std::vector<const RawRow*> rows;
            for (const RawRow& r : table.raw) {
                if (r.variant == variant_name(v) && r.strategy == strategy_name(s)) rows.push_back(&r);
            }
            AccuracyStats stats = aggregate_accuracy(rows);
            strategy_means.push_back(stats.mean);
            table.aggregates.push_back(
                {group_key({{"variant", variant_name(v)}, {"strategy", strategy_name(s)}}),
                 stats.mean, stats.stddev});
        }
        AccuracyStats across = accuracy_stats(strategy_means);
        table.aggregates.push_back({group_key({{"variant", variant_name(v)},
                                               {"across", std::string("strategies")}}),
                                    quantize12(across.mean), quantize12(across.stddev)});
    }
    return table;
}

ResultsTable run_stability_hard(const ExperimentPlan& plan) {
    require_full_and_wo_gd(plan, "run_stability_hard");
    if (plan.template_ids.size() < 6) {
        throw ContractError("run_stability_hard: needs at least 6 templates");
    }
    if (plan.seeds.empty()) throw ContractError("run_stability_hard: no seeds listed");

    std::vector<PlanCell> cells;
    for (Variant v : plan.variants) {
        for (Index t : plan.template_ids) {
            for (std::uint64_t seed : plan.seeds) {
                PlanCell cell;
                cell.variant = v;
                cell.strategy = InitStrategy::Random;  // soft init held fixed
                cell.template_id = t;
                cell.prompt_len = plan.model.prompt_len;
                cell.seed = seed;
                cells.push_back(cell);
            }
        }
    }
    ResultsTable table = finish_table(plan, run_cells(plan, cells));

    for (Variant v : plan.variants) {
        std::vector<double> template_means;
        for (Index t : plan.template_ids) {
            std::vector<const RawRow*> rows;
            for (const RawRow& r : table.raw) {
                if (r.variant == variant_name(v) && r.template_id == t) rows.push_back(&r);
            }
            AccuracyStats stats = aggregate_accuracy(rows);
            template_means.push_back(stats.mean);
            table.aggregates.push_back(
                {group_key({{"variant", variant_name(v)}, {"template", std::to_string(t)}}),
                 stats.mean, stats.stddev});
        }
        AccuracyStats across = accuracy_stats(template_means);
        table.aggregates.push_back({group_key({{"variant", variant_name(v)},
                                               {"across", std::string("templates")}}),
                                    quantize12(across.mean), quantize12(across.stddev)});
    }
    return table;
}

ResultsTable run_ablation(const ExperimentPlan& plan) {
    const std::set<Variant> want = {Variant::Full, Variant::WithoutCL, Variant::WithoutGD,
                                    Variant::WithoutSP, Variant::WithoutHP};
    if (std::set<Variant>(plan.variants.begin(), plan.variants.end()) != want) {
        throw ContractError("run_ablation: plan must list exactly the five variants");
    }
    if (plan.seeds.empty()) throw ContractError("run_ablation: no seeds listed");

    std::vector<PlanCell> cells;
    for (Variant v : plan.variants) {
        for (std::uint64_t seed : plan.seeds) {
            PlanCell cell;
            cell.variant = v;
            cell.strategy = plan.train.init_strategy;
            cell.template_id = plan.train.template_index;
            cell.prompt_len = plan.model.prompt_len;
            cell.seed = seed;
            cells.push_back(cell);
        }
    }
    ResultsTable table = finish_table(plan, run_cells(plan, cells));
    for (Variant v : plan.variants) {
        std::vector<const RawRow*> rows;
        for (const RawRow& r : table.raw) {
            if (r.variant == variant_name(v)) rows.push_back(&r);
        }
        AccuracyStats stats = aggregate_accuracy(rows);
        table.aggregates.push_back(
            {group_key({{"variant", variant_name(v)}}), stats.mean, stats.stddev});
    }
    return table;
}

ResultsTable run_length_sweep(const ExperimentPlan& plan) {
    const std::set<Index> allowed = {5, 10, 20, 50};
    if (plan.prompt_lengths.empty()) throw ContractError("run_length_sweep: no lengths listed");
    for (Index l : plan.prompt_lengths) {
        if (!allowed.count(l)) {
            throw ContractError("run_length_sweep: length " + std::to_string(l) +
                                " outside {5, 10, 20, 50}");
        }
    }
    if (plan.seeds.empty()) throw ContractError("run_length_sweep: no seeds listed");

    std::vector<PlanCell> cells;
    for (Index l : plan.prompt_lengths) {
        for (std::uint64_t seed : plan.seeds) {
            PlanCell cell;
            cell.variant = Variant::Full;
            cell.strategy = plan.train.init_strategy;
            cell.template_id = plan.train.template_index;
            cell.prompt_len = l;
            cell.seed = seed;
            cells.push_back(cell);
        }
    }
    ResultsTable table = finish_table(plan, run_cells(plan, cells));
    for (Index l : plan.prompt_lengths) {
        std::vector<const RawRow*> rows;
        for (const RawRow& r : table.raw) {
            if (r.prompt_len == l) rows.push_back(&r);
        }
        AccuracyStats stats = aggregate_accuracy(rows);
        table.aggregates.push_back(
            {group_key({{"prompt_len", std::to_string(l)}}), stats.mean, stats.stddev});
    }
    return table;
}

namespace {
const char* kCsvHeader =
    "kind,variant,strategy,template_id,prompt_len,seed,test_accuracy,selected_epoch,"
    "wall_time_ms,group,mean,std";
}

void emit_csv(const ResultsTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ContractError("emit_csv: cannot open " + path);
    out << kCsvHeader << "\n";
    char buf[64];
    for (const RawRow& r : table.raw) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.test_accuracy);
        out << "raw," << r.variant << "," << r.strategy << "," << r.template_id << ","
            << r.prompt_len << "," << r.seed << "," << buf << "," << r.selected_epoch << ",";
        std::snprintf(buf, sizeof(buf), "%.3f", r.wall_time_ms);
        out << buf << ",,,\n";
    }
    for (const AggRow& a : table.aggregates) {
        out << "agg,,,,,,,,," << a.group << ",";
        std::snprintf(buf, sizeof(buf), "%.12f", a.mean);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.12f", a.stddev);
        out << buf << "\n";
    }
    out.close();
    if (!out) throw ContractError("emit_csv: write failed for " + path);

    std::ofstream manifest(path + ".manifest.json");
    if (!manifest) throw ContractError("emit_csv: cannot open " + path + ".manifest.json");
    manifest << (table.manifest_json.empty() ? "{}" : table.manifest_json) << "\n";
}

ResultsTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("read_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw ContractError("read_csv: unexpected header in " + path);
    }
    ResultsTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        f.resize(12);
        if (f[0] == "raw") {
            RawRow r;
            r.variant = f[1];
            r.strategy = f[2];
            r.template_id = std::stoll(f[3]);
            r.prompt_len = std::stoll(f[4]);
            r.seed = std::stoull(f[5]);
            r.test_accuracy = std::stod(f[6]);
            r.selected_epoch = std::stoll(f[7]);
            r.wall_time_ms = std::stod(f[8]);
            table.raw.push_back(std::move(r));
        } else if (f[0] == "agg") {
            table.aggregates.push_back({f[9], std::stod(f[10]), std::stod(f[11])});
        } else {
            throw ContractError("read_csv: unknown row kind '" + f[0] + "' in " + path);
        }
    }
    std::ifstream manifest(path + ".manifest.json");
    if (manifest) {
        std::stringstream ss;
        ss << manifest.rdbuf();
        std::string text = ss.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        table.manifest_json = text;
    }
    return table;
}

}  // namespace stablept

#include "stablept/taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "stablept/rng.hpp"

namespace stablept {

namespace {
constexpr Index kSignalSetSize = 12;
constexpr Index kMinLen = 8;
constexpr Index kMaxLen = 20;
constexpr Index kMinSignals = 2;
constexpr Index kMaxSignals = 4;

enum RngTag : std::uint64_t { kTagExamples = 101, kTagTemplates = 102 };
}  // namespace

VocabLayout VocabLayout::standard(Index num_classes) {
    VocabLayout v;
    Index next = v.template_pool_begin + v.template_pool_size;
    for (Index c = 0; c < num_classes; ++c) v.label_word_ids.push_back(next++);
    for (Index c = 0; c < num_classes; ++c) {
        std::vector<Index> set;
        for (Index i = 0; i < kSignalSetSize; ++i) set.push_back(next++);
        v.signal_sets.push_back(std::move(set));
    }
    v.distractor_begin = next;
    v.distractor_size = v.vocab_size - next;
    return v;
}

Index HardTemplate::mask_index() const {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == 1) return static_cast<Index>(i);
    }
    return -1;
}

namespace {

LabeledExample draw_example(const VocabLayout& vocab, Index label, double noise_level, Rng& rng) {
    LabeledExample ex;
    ex.label = label;
    const Index len = kMinLen + static_cast<Index>(rng.uniform_int(kMaxLen - kMinLen + 1));
    const Index n_signal = kMinSignals + static_cast<Index>(rng.uniform_int(kMaxSignals - kMinSignals + 1));
    const bool flipped = rng.uniform() < noise_level;
    const auto& signal_set =
        vocab.signal_sets[static_cast<std::size_t>(flipped ? 1 - label : label)];

    ex.tokens.resize(static_cast<std::size_t>(len));
    for (auto& t : ex.tokens) {
        t = vocab.distractor_begin + static_cast<Index>(rng.uniform_int(vocab.distractor_size));
    }
    // distinct positions for the signal tokens
    std::vector<Index> positions(static_cast<std::size_t>(len));
    for (Index i = 0; i < len; ++i) positions[static_cast<std::size_t>(i)] = i;
    rng.shuffle(positions);
    for (Index s = 0; s < n_signal; ++s) {
        const Index pos = positions[static_cast<std::size_t>(s)];
        ex.tokens[static_cast<std::size_t>(pos)] =
            signal_set[rng.uniform_int(signal_set.size())];
    }
    return ex;
}

}  // namespace

FewShotTask generate_task(Index num_classes, double noise_level, std::uint64_t seed,
                          Index test_size) {
    if (num_classes != 2) {
        throw ContractError("generate_task: only binary tasks are supported, got " +
                            std::to_string(num_classes) + " classes");
    }
    if (noise_level < 0.0 || noise_level >= 0.5) {
        throw ContractError("generate_task: noise_level must lie in [0, 0.5), got " +
                            std::to_string(noise_level));
    }
    if (test_size < 512) {
        throw ContractError("generate_task: test split must hold at least 512 examples");
    }

    FewShotTask task;
    task.vocab = VocabLayout::standard(num_classes);
    task.noise_level = noise_level;
    task.seed = seed;

    Rng rng = Rng(seed).split(kTagExamples);
    std::set<std::vector<Index>> seen;
    auto fill_split = [&](std::vector<LabeledExample>& split, Index per_class) {
        for (Index c = 0; c < num_classes; ++c) {
            for (Index i = 0; i < per_class; ++i) {
                // resample on token-sequence collision so splits stay disjoint
                for (;;) {
                    LabeledExample ex = draw_example(task.vocab, c, noise_level, rng);
                    if (seen.insert(ex.tokens).second) {
                        split.push_back(std::move(ex));
                        break;
                    }
                }
            }
        }
        rng.shuffle(split);
    };
    fill_split(task.train, 32);
    fill_split(task.dev, 32);
    fill_split(task.test, test_size / 2);
    return task;
}

std::vector<HardTemplate> build_templates(Index n, std::uint64_t style_seed) {
    if (n < 1) throw ContractError("build_templates: need at least one template");
    Rng rng = Rng(style_seed).split(kTagTemplates);
    VocabLayout layout = VocabLayout::standard(2);
    std::vector<HardTemplate> out;
    for (Index i = 0; i < n; ++i) {
        HardTemplate t;
        t.id = i;
        const Index len = 4 + static_cast<Index>(rng.uniform_int(7));  // 4..10
        t.tokens.resize(static_cast<std::size_t>(len));
        for (auto& tok : t.tokens) {
            tok = layout.template_pool_begin +
                  static_cast<Index>(rng.uniform_int(layout.template_pool_size));
        }
        const Index mask_pos = static_cast<Index>(rng.uniform_int(len));
        t.tokens[static_cast<std::size_t>(mask_pos)] = layout.mask_id;
        out.push_back(std::move(t));
    }
    return out;
}

HardTemplate bare_mask_template() {
    HardTemplate t;
    t.id = -1;
    t.tokens = {1};
    return t;
}

TokenizedExample tokenize(const std::vector<Index>& raw, Index max_len, const HardTemplate& tmpl,
                          Index pad_id, Index mask_id) {
    const Index tmpl_len = static_cast<Index>(tmpl.tokens.size());
    if (tmpl_len > max_len) {
        throw TemplateError("tokenize: template of length " + std::to_string(tmpl_len) +
                            " does not fit max_seq_len " + std::to_string(max_len));
    }
    TokenizedExample out;
    out.ids.reserve(static_cast<std::size_t>(max_len));
    out.ids = tmpl.tokens;
    for (Index t : raw) {
        if (static_cast<Index>(out.ids.size()) >= max_len) break;
        out.ids.push_back(t);
    }
    out.valid_len = static_cast<Index>(out.ids.size());
    out.ids.resize(static_cast<std::size_t>(max_len), pad_id);

    Index mask_count = 0;
    for (Index i = 0; i < out.valid_len; ++i) {
        if (out.ids[static_cast<std::size_t>(i)] == mask_id) {
            out.mask_pos = i;
            ++mask_count;
        }
    }
    if (mask_count != 1) {
        throw TemplateError("tokenize: expected exactly one mask token, found " +
                            std::to_string(mask_count));
    }
    return out;
}

Index bag_of_words_predict(const VocabLayout& vocab, const std::vector<Index>& tokens) {
    Index best_class = 0;
    Index best_hits = -1;
    for (std::size_t c = 0; c < vocab.signal_sets.size(); ++c) {
        Index hits = 0;
        for (Index t : tokens) {
            for (Index s : vocab.signal_sets[c]) {
                if (t == s) ++hits;
            }
        }
        if (hits > best_hits) {
            best_hits = hits;
            best_class = static_cast<Index>(c);
        }
    }
    return best_class;
}

double bag_of_words_accuracy(const FewShotTask& task, const std::vector<LabeledExample>& split) {
    if (split.empty()) throw ContractError("bag_of_words_accuracy: empty split");
    Index correct = 0;
    for (const auto& ex : split) {
        if (bag_of_words_predict(task.vocab, ex.tokens) == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace {

nlohmann::json example_to_json(const LabeledExample& ex, const char* split) {
    return nlohmann::json{{"split", split}, {"tokens", ex.tokens}, {"label", ex.label}};
}

}  // namespace

void save_task(const FewShotTask& task, const std::string& jsonl_path,
               const std::string& manifest_path) {
    std::ofstream out(jsonl_path);
    if (!out) throw ContractError("save_task: cannot open " + jsonl_path);
    for (const auto& ex : task.train) out << example_to_json(ex, "train").dump() << "\n";
    for (const auto& ex : task.dev) out << example_to_json(ex, "dev").dump() << "\n";
    for (const auto& ex : task.test) out << example_to_json(ex, "test").dump() << "\n";

    nlohmann::json manifest{
        {"schema_version", 1},
        {"num_classes", task.num_classes()},
        {"noise_level", task.noise_level},
        {"seed", task.seed},
        {"test_size", static_cast<Index>(task.test.size())},
    };
    std::ofstream mout(manifest_path);
    if (!mout) throw ContractError("save_task: cannot open " + manifest_path);
    mout << manifest.dump(2) << "\n";
}

FewShotTask load_task(const std::string& jsonl_path, const std::string& manifest_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw ContractError("load_task: cannot open " + jsonl_path);
    FewShotTask task;
    task.vocab = VocabLayout::standard(2);
    if (!manifest_path.empty()) {
        std::ifstream min(manifest_path);
        if (!min) throw ContractError("load_task: cannot open " + manifest_path);
        nlohmann::json manifest;
        min >> manifest;
        task.noise_level = manifest.at("noise_level").get<double>();
        task.seed = manifest.at("seed").get<std::uint64_t>();
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        LabeledExample ex;
        ex.tokens = j.at("tokens").get<std::vector<Index>>();
        ex.label = j.at("label").get<Index>();
        const std::string split = j.at("split").get<std::string>();
        if (split == "train") {
            task.train.push_back(std::move(ex));
        } else if (split == "dev") {
            task.dev.push_back(std::move(ex));
        } else {
            task.test.push_back(std::move(ex));
        }
    }
    return task;
}

}  // namespace stablept

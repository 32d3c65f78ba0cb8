#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stablept/error.hpp"
#include "stablept/tensor.hpp"

namespace stablept {

// Fixed structural layout of the toy vocabulary. Ids are stable across tasks
// so that a model built for one task instance can read any other.
struct VocabLayout {
    Index vocab_size = 128;
    Index pad_id = 0;
    Index mask_id = 1;
    Index template_pool_begin = 2;
    Index template_pool_size = 20;
    std::vector<Index> label_word_ids;            // one word per class
    std::vector<std::vector<Index>> signal_sets;  // disjoint token sets, one per class
    Index distractor_begin = 0;
    Index distractor_size = 0;

    static VocabLayout standard(Index num_classes);
};

struct LabeledExample {
    std::vector<Index> tokens;
    Index label = 0;
};

struct FewShotTask {
    VocabLayout vocab;
    std::vector<LabeledExample> train;  // 64, class-balanced
    std::vector<LabeledExample> dev;    // 64, class-balanced
    std::vector<LabeledExample> test;   // >= 512
    double noise_level = 0.0;
    std::uint64_t seed = 0;
    Index num_classes() const { return static_cast<Index>(vocab.label_word_ids.size()); }
};

// Hard-prompt template: a token sequence with exactly one mask slot.
struct HardTemplate {
    std::vector<Index> tokens;
    Index id = 0;
    Index mask_index() const;
};

// Synthetic binary few-shot task. Class-c examples embed 2..4 tokens from the
// class signal set among distractors; with probability noise_level the signal
// tokens come from the wrong class instead. Splits are exactly balanced and
// pairwise disjoint as token sequences. Pure function of its arguments.
FewShotTask generate_task(Index num_classes, double noise_level, std::uint64_t seed,
                          Index test_size = 512);

// n paraphrase templates of length 4..10 with the mask slot at varying
// positions, drawn from the fixed template token pool.
std::vector<HardTemplate> build_templates(Index n, std::uint64_t style_seed);

// The bare-mask template used when hard prompts are ablated.
HardTemplate bare_mask_template();

struct TokenizedExample {
    std::vector<Index> ids;  // padded to max_len
    Index mask_pos = -1;
    Index valid_len = 0;
};

// [template, input] splicing: concatenate, truncate to max_len, pad.
TokenizedExample tokenize(const std::vector<Index>& raw, Index max_len, const HardTemplate& tmpl,
                          Index pad_id, Index mask_id);

// Signal-token count classifier; the independent reference for task sanity.
Index bag_of_words_predict(const VocabLayout& vocab, const std::vector<Index>& tokens);
double bag_of_words_accuracy(const FewShotTask& task, const std::vector<LabeledExample>& split);

// JSON-lines serialization (one example per line) plus a manifest holding the
// generation parameters for exact regeneration.
void save_task(const FewShotTask& task, const std::string& jsonl_path,
               const std::string& manifest_path);
FewShotTask load_task(const std::string& jsonl_path, const std::string& manifest_path = "");

}  // namespace stablept

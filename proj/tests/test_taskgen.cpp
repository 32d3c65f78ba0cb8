#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "stablept/taskgen.hpp"

using namespace stablept;

TEST_CASE("split sizes and exact class balance") {
    FewShotTask task = generate_task(2, 0.1, 42);
    CHECK(task.train.size() == 64);
    CHECK(task.dev.size() == 64);
    CHECK(task.test.size() >= 512);
    for (const auto* split : {&task.train, &task.dev}) {
        Index per_class[2] = {0, 0};
        for (const auto& ex : *split) ++per_class[ex.label];
        CHECK(per_class[0] == 32);
        CHECK(per_class[1] == 32);
    }
}

TEST_CASE("splits are pairwise disjoint as token sequences") {
    FewShotTask task = generate_task(2, 0.0, 7);
    std::set<std::vector<Index>> seen;
    std::size_t total = 0;
    for (const auto* split : {&task.train, &task.dev, &task.test}) {
        for (const auto& ex : *split) {
            seen.insert(ex.tokens);
            ++total;
        }
    }
    CHECK(seen.size() == total);
}

TEST_CASE("noise-free tasks are solved exactly by the bag-of-words oracle") {
    FewShotTask task = generate_task(2, 0.0, 3);
    CHECK(bag_of_words_accuracy(task, task.test) == 1.0);
    CHECK(bag_of_words_accuracy(task, task.train) == 1.0);
    CHECK(bag_of_words_accuracy(task, task.dev) == 1.0);
}

TEST_CASE("noise 0.2 lands the oracle near 0.8 on the test split") {
    FewShotTask task = generate_task(2, 0.2, 11);
    const double acc = bag_of_words_accuracy(task, task.test);
    CHECK(acc > 0.77);
    CHECK(acc < 0.83);
}

TEST_CASE("task generation is a pure function of its parameters") {
    FewShotTask a = generate_task(2, 0.15, 99);
    FewShotTask b = generate_task(2, 0.15, 99);
    REQUIRE(a.test.size() == b.test.size());
    for (std::size_t i = 0; i < a.test.size(); ++i) {
        CHECK(a.test[i].tokens == b.test[i].tokens);
        CHECK(a.test[i].label == b.test[i].label);
    }
    FewShotTask c = generate_task(2, 0.15, 100);
    bool any_diff = false;
    for (std::size_t i = 0; i < std::min(a.train.size(), c.train.size()); ++i) {
        any_diff = any_diff || a.train[i].tokens != c.train[i].tokens;
    }
    CHECK(any_diff);
}

TEST_CASE("generation contract errors") {
    CHECK_THROWS_AS(generate_task(3, 0.0, 1), ContractError);
    CHECK_THROWS_AS(generate_task(2, 0.5, 1), ContractError);
    CHECK_THROWS_AS(generate_task(2, -0.1, 1), ContractError);
}

TEST_CASE("templates carry exactly one mask and no pads") {
    auto templates = build_templates(6, 5);
    CHECK(templates.size() == 6);
    VocabLayout layout = VocabLayout::standard(2);
    std::set<Index> mask_positions;
    for (const auto& t : templates) {
        Index masks = 0;
        for (Index tok : t.tokens) {
            CHECK(tok != layout.pad_id);
            if (tok == layout.mask_id) ++masks;
        }
        CHECK(masks == 1);
        CHECK(t.tokens.size() >= 4);
        CHECK(t.tokens.size() <= 10);
        mask_positions.insert(t.mask_index());
    }
    CHECK(mask_positions.size() > 1);  // mask slot actually moves between templates

    auto again = build_templates(6, 5);
    for (std::size_t i = 0; i < templates.size(); ++i) {
        CHECK(templates[i].tokens == again[i].tokens);
    }
}

TEST_CASE("tokenize pads, truncates, and preserves the mask") {
    VocabLayout layout = VocabLayout::standard(2);
    HardTemplate tmpl;
    tmpl.tokens = {2, 3, 1, 4, 5};  // mask at index 2
    std::vector<Index> input(10, 50);

    TokenizedExample tok = tokenize(input, 32, tmpl, layout.pad_id, layout.mask_id);
    CHECK(tok.ids.size() == 32);
    CHECK(tok.valid_len == 15);
    CHECK(tok.mask_pos == 2);
    for (Index i = 15; i < 32; ++i) CHECK(tok.ids[static_cast<std::size_t>(i)] == layout.pad_id);

    std::vector<Index> longer(40, 51);
    TokenizedExample trunc = tokenize(longer, 32, tmpl, layout.pad_id, layout.mask_id);
    CHECK(trunc.valid_len == 32);
    CHECK(trunc.mask_pos == 2);

    // round trip: dropping pads gives template ++ truncated input
    std::vector<Index> expect = tmpl.tokens;
    for (std::size_t i = 0; i < 27; ++i) expect.push_back(51);
    std::vector<Index> depadded(trunc.ids.begin(), trunc.ids.begin() + trunc.valid_len);
    CHECK(depadded == expect);

    HardTemplate too_long;
    too_long.tokens.assign(33, 2);
    too_long.tokens[4] = layout.mask_id;
    CHECK_THROWS_AS(tokenize(input, 32, too_long, layout.pad_id, layout.mask_id), TemplateError);

    HardTemplate no_mask;
    no_mask.tokens = {2, 3, 4};
    CHECK_THROWS_AS(tokenize(input, 32, no_mask, layout.pad_id, layout.mask_id), TemplateError);
}

TEST_CASE("jsonl round trip and manifest regeneration") {
    FewShotTask task = generate_task(2, 0.1, 21);
    const std::string jsonl = "/tmp/stablept_task_test.jsonl";
    const std::string manifest = "/tmp/stablept_task_test.manifest.json";
    save_task(task, jsonl, manifest);
    FewShotTask loaded = load_task(jsonl, manifest);
    REQUIRE(loaded.train.size() == task.train.size());
    REQUIRE(loaded.dev.size() == task.dev.size());
    REQUIRE(loaded.test.size() == task.test.size());
    for (std::size_t i = 0; i < task.train.size(); ++i) {
        CHECK(loaded.train[i].tokens == task.train[i].tokens);
        CHECK(loaded.train[i].label == task.train[i].label);
    }
    // the manifest regenerates the identical task
    FewShotTask regen = generate_task(2, loaded.noise_level, loaded.seed,
                                      static_cast<Index>(loaded.test.size()));
    CHECK(regen.test.size() == task.test.size());
    for (std::size_t i = 0; i < task.test.size(); ++i) {
        CHECK(regen.test[i].tokens == task.test[i].tokens);
    }
    std::remove(jsonl.c_str());
    std::remove(manifest.c_str());
}

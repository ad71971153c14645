#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "pbp/corpus.hpp"
#include "pbp/rng.hpp"
#include "pbp/tokenizer.hpp"

using namespace pbp;
using pbp::testing::make_utterance;
using pbp::testing::simple_utterance;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string serialize(const std::vector<Utterance>& corpus) {
    std::string out;
    for (const auto& u : corpus) out += utterance_to_json_line(u) + "\n";
    return out;
}

SynthLanguageSpec table1_spec(const std::string& name, std::uint64_t seed) {
    SynthLanguageSpec spec;
    spec.name = name;
    spec.lexicon_size = 900;
    spec.break_grammar.target_ratio = {0.842, 0.077, 0.081};
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("language codes") {
    CHECK(valid_language_code("en"));
    CHECK(valid_language_code("synA"));
    CHECK_FALSE(valid_language_code(""));
    CHECK_FALSE(valid_language_code("syn_a"));
    CHECK_FALSE(valid_language_code("fr-ca"));
}

TEST_CASE("validate_utterance: ok, violations, warnings") {
    const auto ok = simple_utterance("u1", 4);
    CHECK(validate_utterance(ok).ok());
    CHECK(validate_utterance(ok).warnings.empty());

    auto bad = make_utterance("u2", "en", {"a", "b", "c", "d"},
                              {BreakLabel::SB, BreakLabel::AP, BreakLabel::AP, BreakLabel::SB});
    const auto report = validate_utterance(bad);
    CHECK_FALSE(report.ok());
    bool found = false;
    for (const auto& v : report.violations) {
        if (v.find("SB before final") != std::string::npos) found = true;
    }
    CHECK(found);

    const auto small = simple_utterance("u3", 3);
    const auto small_report = validate_utterance(small);
    CHECK(small_report.ok());  // below-minimum word count is a warning, not an error
    REQUIRE(small_report.warnings.size() == 1);
    CHECK(small_report.warnings[0] == "word count below 4");

    auto no_sb = simple_utterance("u4", 4);
    no_sb.junctures[3] = BreakLabel::AP;
    CHECK_FALSE(validate_utterance(no_sb).ok());

    auto mismatch = simple_utterance("u5", 4);
    mismatch.junctures.pop_back();
    CHECK_FALSE(validate_utterance(mismatch).ok());
}

TEST_CASE("load_corpus: minimal record, malformed records, error positions") {
    const std::string path = temp_path("pbp_corpus_ok.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"u1","lang":"en","words":["a","b","c","d"],"breaks":["AP","AP","AP","SB"]})"
            << "\n";
    }
    const auto corpus = load_corpus(path);
    REQUIRE(corpus.size() == 1);
    CHECK(corpus[0].id == "u1");
    CHECK(corpus[0].words.size() == 4);
    CHECK(corpus[0].junctures.back() == BreakLabel::SB);

    const std::string bad_path = temp_path("pbp_corpus_bad.jsonl");
    {
        std::ofstream out(bad_path);
        out << R"({"id":"u1","lang":"en","words":["a","b"],"breaks":["AP","SB"]})" << "\n";
        out << R"({"id":"u2","lang":"en","words":["a","b"],"breaks":["SB","SB"]})" << "\n";
    }
    try {
        load_corpus(bad_path);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find(":2") != std::string::npos);  // line number
        CHECK(msg.find("u2") != std::string::npos);  // offending id
    }

    const std::string mismatch_path = temp_path("pbp_corpus_mismatch.jsonl");
    {
        std::ofstream out(mismatch_path);
        out << R"({"id":"u9","lang":"en","words":["a","b","c"],"breaks":["AP","SB"]})" << "\n";
    }
    try {
        load_corpus(mismatch_path);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("u9") != std::string::npos);
    }

    CHECK_THROWS(load_corpus(temp_path("pbp_no_such_file.jsonl")));
}

TEST_CASE("corpus save/load round-trip preserves bytes") {
    std::vector<Utterance> corpus;
    for (int i = 0; i < 5; ++i) corpus.push_back(simple_utterance("u" + std::to_string(i), 4 + i));
    const std::string path = temp_path("pbp_corpus_rt.jsonl");
    save_corpus(corpus, path);
    const auto loaded = load_corpus(path);
    CHECK(serialize(loaded) == serialize(corpus));
}

TEST_CASE("split_dataset: determinism, partition, errors") {
    std::vector<Utterance> corpus;
    for (int i = 0; i < 10; ++i) corpus.push_back(simple_utterance("u" + std::to_string(i), 5));

    const auto a = split_dataset(corpus, {6, 2, 2}, 7);
    const auto b = split_dataset(corpus, {6, 2, 2}, 7);
    CHECK(serialize(a.train) == serialize(b.train));
    CHECK(serialize(a.validation) == serialize(b.validation));
    CHECK(serialize(a.test) == serialize(b.test));

    std::set<std::string> ids;
    for (const auto* part : {&a.train, &a.validation, &a.test}) {
        for (const auto& u : *part) CHECK(ids.insert(u.id).second);
    }
    CHECK(ids.size() == 10);

    CHECK_THROWS(split_dataset(corpus, {11, 0, 0}, 1));

    // Random sizes/seeds keep the partition property.
    CounterRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t t = rng.uniform_int(8) + 1;
        const std::size_t v = rng.uniform_int(10 - t);
        const std::size_t s = rng.uniform_int(10 - t - v + 1);
        const auto split = split_dataset(corpus, {t, v, s}, rng.next_u64());
        CHECK(split.train.size() == t);
        CHECK(split.validation.size() == v);
        CHECK(split.test.size() == s);
        std::set<std::string> seen;
        for (const auto* part : {&split.train, &split.validation, &split.test}) {
            for (const auto& u : *part) CHECK(seen.insert(u.id).second);
        }
    }
}

TEST_CASE("paper-sized split on a synthetic corpus") {
    const auto corpus = generate_synthetic_language(table1_spec("en", 11), 6400);
    const auto split = split_dataset(corpus, {6000, 200, 200}, 1);
    CHECK(split.train.size() == 6000);
    CHECK(split.validation.size() == 200);
    CHECK(split.test.size() == 200);
}

TEST_CASE("sample_few_shot: nesting, bounds, powers-of-two schedule") {
    std::vector<Utterance> corpus;
    for (int i = 0; i < 5000; ++i) corpus.push_back(simple_utterance("u" + std::to_string(i), 4));

    const auto k4 = sample_few_shot(corpus, 4, 123);
    const auto k8 = sample_few_shot(corpus, 8, 123);
    REQUIRE(k8.size() == 8);
    for (std::size_t i = 0; i < 4; ++i) CHECK(k4[i].id == k8[i].id);

    CHECK(sample_few_shot(corpus, 0, 9).empty());
    CHECK_THROWS(sample_few_shot(corpus, 5001, 9));

    for (std::size_t k = 4; k <= 4096; k *= 2) {
        const auto sample = sample_few_shot(corpus, k, 7);
        CHECK(sample.size() == k);
        std::set<std::string> ids;
        for (const auto& u : sample) CHECK(ids.insert(u.id).second);
    }

    // Nesting holds for arbitrary k pairs under one seed.
    const auto full = sample_few_shot(corpus, 600, 42);
    for (std::size_t k : {1, 17, 300, 599}) {
        const auto part = sample_few_shot(corpus, k, 42);
        for (std::size_t i = 0; i < k; ++i) CHECK(part[i].id == full[i].id);
    }
}

TEST_CASE("compute_stats: hand ratios, single utterance, flat-count oracle") {
    const auto vocab = train_vocab({simple_utterance("v", 8)}, 64, 1, 0);

    std::vector<Utterance> two = {
        make_utterance("a", "en", {"w0", "w1"}, {BreakLabel::AP, BreakLabel::SB}),
        make_utterance("b", "en", {"w0", "w1"}, {BreakLabel::IP, BreakLabel::SB})};
    const auto stats = compute_stats(two, vocab, 4);
    CHECK(stats.label_ratio[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(stats.label_ratio[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(stats.label_ratio[2] == doctest::Approx(0.50).epsilon(1e-12));
    CHECK(stats.ratio_to_reference == doctest::Approx(0.5));
    CHECK(stats.label_ratio[0] + stats.label_ratio[1] + stats.label_ratio[2] ==
          doctest::Approx(1.0).epsilon(1e-9));

    const auto one = compute_stats({simple_utterance("solo", 6)}, vocab, 1);
    CHECK(one.subwords_sd == 0.0);

    CHECK_THROWS(compute_stats({}, vocab, 1));

    // label_ratio equals an independent flat count, exactly.
    const auto corpus = generate_synthetic_language(table1_spec("en", 5), 300);
    const auto s = compute_stats(corpus, vocab, corpus.size());
    std::array<std::size_t, 3> counts{};
    std::size_t total = 0;
    for (const auto& u : corpus) {
        for (BreakLabel b : u.junctures) {
            ++counts[static_cast<std::size_t>(b)];
            ++total;
        }
    }
    for (int c = 0; c < 3; ++c) {
        CHECK(s.label_ratio[static_cast<std::size_t>(c)] ==
              double(counts[static_cast<std::size_t>(c)]) / double(total));
    }
}

TEST_CASE("generator: target ratios within 0.05 at n=5000") {
    const auto corpus = generate_synthetic_language(table1_spec("en", 17), 5000);
    std::array<std::size_t, 3> counts{};
    std::size_t total = 0;
    for (const auto& u : corpus) {
        for (BreakLabel b : u.junctures) {
            ++counts[static_cast<std::size_t>(b)];
            ++total;
        }
    }
    CHECK(std::abs(double(counts[0]) / double(total) - 0.842) <= 0.05);
    CHECK(std::abs(double(counts[1]) / double(total) - 0.077) <= 0.05);
    CHECK(std::abs(double(counts[2]) / double(total) - 0.081) <= 0.05);
}

TEST_CASE("generator: determinism and validity across seeds") {
    const auto spec = table1_spec("syn", 23);
    const auto a = generate_synthetic_language(spec, 400);
    const auto b = generate_synthetic_language(spec, 400);
    CHECK(serialize(a) == serialize(b));

    for (std::uint64_t seed : {1ull, 99ull, 31337ull}) {
        auto s = table1_spec("synx", seed);
        const auto corpus = generate_synthetic_language(s, 200);
        CHECK(corpus.size() == 200);
        for (const auto& u : corpus) {
            const auto report = validate_utterance(u);
            CHECK(report.ok());
            CHECK(u.words.size() >= 4);
            CHECK(u.words.size() <= 25);
        }
    }
}

TEST_CASE("generator: full-overlap child reproduces the parent distribution") {
    const auto parent_spec = table1_spec("synA", 31);
    SynthLanguageSpec child_spec = table1_spec("synB", 31);
    child_spec.parent = "synA";
    child_spec.overlap = 1.0;
    child_spec.lexicon_size = parent_spec.lexicon_size;

    const auto parent = generate_synthetic_language(parent_spec, 150);
    const auto child = generate_synthetic_language(child_spec, 150, &parent_spec);
    REQUIRE(parent.size() == child.size());
    // Identical lexicon and grammar parameters plus the same seed mean the
    // word/juncture streams coincide; only ids and language tags differ.
    for (std::size_t i = 0; i < parent.size(); ++i) {
        CHECK(parent[i].words == child[i].words);
        CHECK(parent[i].junctures == child[i].junctures);
        CHECK(child[i].lang == "synB");
    }
}

TEST_CASE("generator: partial overlap shares part of the lexicon") {
    const auto parent_spec = table1_spec("synA", 41);
    SynthLanguageSpec child_spec = table1_spec("synB", 43);
    child_spec.parent = "synA";
    child_spec.overlap = 0.5;

    const auto parent = generate_synthetic_language(parent_spec, 800);
    const auto child = generate_synthetic_language(child_spec, 800, &parent_spec);
    std::set<std::string> parent_words, child_words;
    for (const auto& u : parent) parent_words.insert(u.words.begin(), u.words.end());
    for (const auto& u : child) child_words.insert(u.words.begin(), u.words.end());
    std::size_t shared = 0;
    for (const auto& w : child_words) shared += parent_words.count(w);
    const double frac = double(shared) / double(child_words.size());
    CHECK(frac > 0.25);
    CHECK(frac < 0.75);
}

TEST_CASE("generator rejects invalid specs") {
    auto spec = table1_spec("x", 1);
    spec.break_grammar.target_ratio = {0.5, 0.5, 0.5};
    CHECK_THROWS(generate_synthetic_language(spec, 10));

    spec = table1_spec("x", 1);
    spec.overlap = 1.5;
    spec.parent = "p";
    CHECK_THROWS(generate_synthetic_language(spec, 10, &spec));

    spec = table1_spec("x", 1);
    spec.length_range = {10, 4};
    CHECK_THROWS(generate_synthetic_language(spec, 10));

    CHECK_THROWS(generate_synthetic_language(table1_spec("x", 1), 0));
}

TEST_CASE("stats table renders one row per language") {
    const auto vocab = train_vocab({simple_utterance("v", 8)}, 64, 1, 0);
    std::vector<Utterance> corpus = {simple_utterance("a", 5), simple_utterance("b", 6)};
    std::ostringstream out;
    write_stats_csv(out, {{"en", compute_stats(corpus, vocab, 2)}});
    const std::string text = out.str();
    CHECK(text.find("language,utterances,ratio") == 0);
    CHECK(text.find("\nen,2,1.00,") != std::string::npos);
}

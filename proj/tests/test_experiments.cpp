#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "pbp/experiments.hpp"

using namespace pbp;

namespace {

// The reference numbers from the cross-lingual transfer study this
// harness mirrors, used as layout fixtures for the exporters.
ZeroShotMatrix reference_matrix() {
    ZeroShotMatrix m;
    m.languages = {"EN", "FR", "ES", "PT"};
    m.scores = {{0.8212, 0.7698, 0.7216, 0.8639},
                {0.7371, 0.9237, 0.6737, 0.7684},
                {0.7163, 0.6618, 0.9140, 0.7038},
                {0.7878, 0.7672, 0.6837, 0.9262}};
    m.seeds = {1};
    m.per_seed = {m.scores};
    return m;
}

FewShotCurve reference_curve() {
    FewShotCurve c;
    c.target = "FR";
    c.scenario = FewShotScenario::EnglishOnly;
    c.zero_shot = 0.7969;
    c.zero_shot_per_seed = {0.7969};
    c.seeds = {1};
    c.stage1_digests = {0xabcdef};
    const std::vector<std::pair<std::size_t, double>> pts = {
        {8, 0.8642}, {32, 0.8675}, {128, 0.8979}, {256, 0.8941}, {512, 0.9059}, {2048, 0.9189}};
    for (const auto& [k, score] : pts) c.points.push_back({k, score, {score}});
    return c;
}

struct TinyExperiment {
    CorpusMap corpora;
    WordPieceVocab vocab;
    ModelCheckpoint pretrained;
    ExperimentConfig cfg;
};

TinyExperiment tiny_world() {
    SynthLanguageSpec a;
    a.name = "synA";
    a.lexicon_size = 150;
    a.seed = 61;
    SynthLanguageSpec b = a;
    b.name = "synB";
    b.parent = "synA";
    b.overlap = 0.5;
    b.seed = 62;

    TinyExperiment world;
    world.corpora.emplace("synA", generate_synthetic_language(a, 80));
    world.corpora.emplace("synB", generate_synthetic_language(b, 80, &a));

    std::vector<Utterance> pooled;
    for (const auto& [lang, c] : world.corpora) pooled.insert(pooled.end(), c.begin(), c.end());
    world.vocab = train_vocab(pooled, 400, 2, 0);

    world.pretrained.config.layers = 1;
    world.pretrained.config.heads = 2;
    world.pretrained.config.d_model = 16;
    world.pretrained.config.ffn_dim = 32;
    world.pretrained.config.vocab_size = world.vocab.size();
    world.pretrained.config.max_positions = 64;
    world.pretrained.weights = init_model(world.pretrained.config, 5);
    world.pretrained.meta.stage = "pretrained";

    world.cfg.languages = {"synA", "synB"};
    world.cfg.source = "synA";
    world.cfg.split = SplitSizes{40, 8, 16};
    world.cfg.source_expand = 60;
    world.cfg.k_schedule = {2, 4};
    world.cfg.seeds = {1};
    world.cfg.train.batch_size = 8;
    world.cfg.train.learning_rate = 1e-3;
    world.cfg.train.epochs = 1;
    world.cfg.train.seed = 77;
    return world;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("median") {
    CHECK(median({3.0}) == 3.0);
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK_THROWS(median({}));
}

TEST_CASE("parallel_for: covers all indices and propagates exceptions") {
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hits[i] = int(i); });
    for (int i = 0; i < 100; ++i) CHECK(hits[std::size_t(i)] == i);

    CHECK_THROWS(parallel_for(8, 3, [](std::size_t i) {
        if (i == 5) throw std::runtime_error("boom");
    }));
}

TEST_CASE("zero-shot table renders the reference layout exactly") {
    const auto m = reference_matrix();
    const std::string expected =
        "train\\test,EN,FR,ES,PT\n"
        "EN,82.12,76.98,72.16,86.39\n"
        "FR,73.71,92.37,67.37,76.84\n"
        "ES,71.63,66.18,91.40,70.38\n"
        "PT,78.78,76.72,68.37,92.62\n";
    CHECK(zero_shot_csv(m) == expected);
}

TEST_CASE("largest zero-shot drop in the reference matrix is ES->FR at 26.19 points") {
    const auto m = reference_matrix();
    double largest = 0.0;
    std::string at;
    for (const auto& train : m.languages) {
        for (const auto& test : m.languages) {
            const double drop = m.score(test, test) - m.score(train, test);
            if (drop > largest) {
                largest = drop;
                at = train + "->" + test;
            }
        }
    }
    CHECK(at == "ES->FR");
    CHECK(100.0 * largest == doctest::Approx(26.19).epsilon(1e-9));
    // Smallest cross-lingual drop: PT->EN at 3.34.
    CHECK(100.0 * (m.score("EN", "EN") - m.score("PT", "EN")) ==
          doctest::Approx(3.34).epsilon(1e-9));
}

TEST_CASE("few-shot table renders the reference row with recomputed deltas") {
    const auto c = reference_curve();
    const std::string expected =
        "language,zero_shot,k=8_score,k=8_delta,k=32_score,k=32_delta,k=128_score,k=128_delta,"
        "k=256_score,k=256_delta,k=512_score,k=512_delta,k=2048_score,k=2048_delta\n"
        "FR,79.69,86.42,6.73,86.75,7.06,89.79,10.10,89.41,9.72,90.59,10.90,91.89,12.20\n";
    CHECK(few_shot_csv(c) == expected);

    // Deltas come from the stored fractions, never from a stored column.
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        CHECK(c.delta(i) == doctest::Approx(c.points[i].score - c.zero_shot).epsilon(1e-15));
    }
}

TEST_CASE("reference Augmented ES endpoint: delta 21.32 at k=2048") {
    FewShotCurve c;
    c.target = "ES";
    c.scenario = FewShotScenario::Augmented;
    c.zero_shot = 0.6957;
    c.points.push_back({2048, 0.9089, {0.9089}});
    CHECK(100.0 * c.delta(0) == doctest::Approx(21.32).epsilon(1e-9));
    const std::string csv = few_shot_csv(c);
    CHECK(csv.find("ES,69.57,90.89,21.32") != std::string::npos);
}

TEST_CASE("few-shot SVG: one marker per point, log-spaced, dashed augmented line") {
    auto english = reference_curve();
    auto augmented = reference_curve();
    augmented.scenario = FewShotScenario::Augmented;
    for (auto& p : augmented.points) p.score -= 0.01;
    augmented.zero_shot = 0.7921;

    const std::string svg = few_shot_svg({english, augmented});
    CHECK(svg.find("<svg ") == 0);
    std::size_t circles = 0, pos = 0;
    while ((pos = svg.find("<circle", pos)) != std::string::npos) {
        ++circles;
        pos += 7;
    }
    CHECK(circles == 12);  // 6 points per curve
    CHECK(svg.find("stroke-dasharray=\"6 4\"") != std::string::npos);
    CHECK(svg.find("macro-F1") != std::string::npos);

    // Powers of two land equidistant on the log axis: extract the tick
    // x positions written for k gridlines via the text labels.
    const std::string row = few_shot_svg({english});
    CHECK(row.find(">8<") != std::string::npos);
    CHECK(row.find(">2048<") != std::string::npos);
}

TEST_CASE("build_stage1_composite: expansion, augmentation, audits") {
    auto world = tiny_world();
    const auto splits = make_splits(world.cfg, world.corpora);

    const auto english_only =
        build_stage1_composite(FewShotScenario::EnglishOnly, "synA", "synB", world.corpora,
                               splits, 30, 99);
    CHECK(english_only.size() == 30);
    for (const auto& u : english_only) CHECK(u.lang == "synA");

    // expand_to beyond the pool clamps to the full pool with a note.
    std::ostringstream log;
    const auto full =
        build_stage1_composite(FewShotScenario::EnglishOnly, "synA", "synB", world.corpora,
                               splits, 10000, 99, &log);
    CHECK(full.size() == world.corpora.at("synA").size());
    CHECK(log.str().find("full pool") != std::string::npos);

    const auto augmented =
        build_stage1_composite(FewShotScenario::Augmented, "synA", "synB", world.corpora, splits,
                               30, 99);
    CHECK(augmented.size() == 30);  // only two languages: nothing to add
    for (const auto& u : augmented) CHECK(u.lang != "synB");

    CHECK_THROWS(build_stage1_composite(FewShotScenario::EnglishOnly, "synA", "synA",
                                        world.corpora, splits, 30, 99));
}

TEST_CASE("augmented composite includes every non-target language's train split") {
    auto world = tiny_world();
    SynthLanguageSpec c;
    c.name = "synC";
    c.lexicon_size = 150;
    c.seed = 63;
    world.corpora.emplace("synC", generate_synthetic_language(c, 80));
    world.cfg.languages = {"synA", "synB", "synC"};

    const auto splits = make_splits(world.cfg, world.corpora);
    const auto composite = build_stage1_composite(FewShotScenario::Augmented, "synA", "synB",
                                                  world.corpora, splits, 30, 99);
    std::size_t from_c = 0;
    for (const auto& u : composite) {
        CHECK(u.lang != "synB");
        from_c += u.lang == "synC";
    }
    CHECK(from_c == splits.at("synC").train.size());
    CHECK(composite.size() == 30 + from_c);
}

TEST_CASE("zero-shot matrix: shape, determinism, insufficient data error") {
    const auto world = tiny_world();
    const auto m1 = run_zero_shot_matrix(world.cfg, world.pretrained, world.vocab, world.corpora);
    CHECK(m1.languages == std::vector<LanguageCode>{"synA", "synB"});
    REQUIRE(m1.scores.size() == 2);
    for (const auto& row : m1.scores) {
        REQUIRE(row.size() == 2);
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    const auto m2 = run_zero_shot_matrix(world.cfg, world.pretrained, world.vocab, world.corpora);
    CHECK(m1.scores == m2.scores);  // bitwise deterministic

    auto starved = world.cfg;
    starved.split = SplitSizes{200, 8, 16};
    CHECK_THROWS(run_zero_shot_matrix(starved, world.pretrained, world.vocab, world.corpora));
}

TEST_CASE("few-shot curve: structure, nesting, determinism, guards") {
    const auto world = tiny_world();
    const auto curve = run_few_shot_curve(world.cfg, FewShotScenario::EnglishOnly, "synB",
                                          world.pretrained, world.vocab, world.corpora);
    CHECK(curve.target == "synB");
    REQUIRE(curve.points.size() == 2);
    CHECK(curve.points[0].k == 2);
    CHECK(curve.points[1].k == 4);
    CHECK(curve.zero_shot_per_seed.size() == 1);
    CHECK(curve.stage1_digests[0] != 0);
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        CHECK(curve.delta(i) == doctest::Approx(curve.points[i].score - curve.zero_shot));
    }

    const auto again = run_few_shot_curve(world.cfg, FewShotScenario::EnglishOnly, "synB",
                                          world.pretrained, world.vocab, world.corpora);
    CHECK(again.zero_shot == curve.zero_shot);
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        CHECK(again.points[i].score == curve.points[i].score);
    }

    // Oversized k values are dropped with a note.
    auto capped = world.cfg;
    capped.k_schedule = {2, 4, 4096};
    std::ostringstream log;
    const auto capped_curve = run_few_shot_curve(capped, FewShotScenario::EnglishOnly, "synB",
                                                 world.pretrained, world.vocab, world.corpora,
                                                 &log);
    CHECK(capped_curve.points.size() == 2);
    CHECK(log.str().find("dropping k=4096") != std::string::npos);

    CHECK_THROWS(run_few_shot_curve(world.cfg, FewShotScenario::EnglishOnly, "synA",
                                    world.pretrained, world.vocab, world.corpora));
}

TEST_CASE("exports: files written, byte-stable across re-export") {
    const auto world = tiny_world();
    const auto dir =
        (std::filesystem::temp_directory_path() / "pbp_export_test").string();
    std::filesystem::remove_all(dir);

    const auto m = reference_matrix();
    const auto paths1 = export_zero_shot(m, world.cfg, dir);
    REQUIRE(paths1.size() == 2);
    const std::string csv1 = slurp(paths1[0]);
    const std::string json1 = slurp(paths1[1]);

    const auto paths2 = export_zero_shot(m, world.cfg, dir);
    CHECK(slurp(paths2[0]) == csv1);
    CHECK(slurp(paths2[1]) == json1);
    CHECK(json1.find("\"kind\": \"zero_shot_matrix\"") != std::string::npos);
    CHECK(json1.find("scores_per_seed") != std::string::npos);

    const auto curve_paths = export_few_shot({reference_curve()}, world.cfg, dir);
    REQUIRE(curve_paths.size() == 3);  // csv, json, svg
    const std::string svg = slurp(curve_paths[2]);
    CHECK(svg.find("<svg") == 0);
    const auto curve_paths2 = export_few_shot({reference_curve()}, world.cfg, dir);
    CHECK(slurp(curve_paths2[2]) == svg);
    const std::string record = slurp(curve_paths[1]);
    CHECK(record.find("\"stage1_checkpoint_digests\"") != std::string::npos);
    CHECK(record.find("00000000009abcdef") == std::string::npos);  // digests are 16 hex chars
    CHECK(record.find("0000000000abcdef") != std::string::npos);
}

TEST_CASE("scenario names round-trip") {
    CHECK(scenario_from_string("english-only") == FewShotScenario::EnglishOnly);
    CHECK(scenario_from_string("augmented") == FewShotScenario::Augmented);
    CHECK_FALSE(scenario_from_string("nope").has_value());
    CHECK(std::string(to_string(FewShotScenario::EnglishOnly)) == "english-only");
}

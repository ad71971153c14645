#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>

#include "helpers.hpp"
#include "pbp/metrics.hpp"
#include "pbp/rng.hpp"

using namespace pbp;
using pbp::testing::flat_macro_f1;

namespace {

std::vector<BreakLabel> labels(std::initializer_list<int> ids) {
    std::vector<BreakLabel> out;
    for (int i : ids) out.push_back(static_cast<BreakLabel>(i));
    return out;
}

}  // namespace

TEST_CASE("confusion: diagonal, off-diagonal, length mismatch") {
    const auto gold = labels({0, 1, 2});
    const auto diag = confusion(gold, gold);
    CHECK(diag.counts[0][0] == 1);
    CHECK(diag.counts[1][1] == 1);
    CHECK(diag.counts[2][2] == 1);
    CHECK(diag.total() == 3);

    const auto m = confusion(gold, labels({0, 0, 2}));
    CHECK(m.counts[1][0] == 1);
    CHECK(m.counts[0][0] == 1);
    CHECK(m.counts[2][2] == 1);

    const ConfusionMatrix empty;
    CHECK(empty.total() == 0);
    CHECK_THROWS(macro_f1(empty));

    CHECK_THROWS(confusion(gold, labels({0, 1})));
}

TEST_CASE("macro_f1: perfect predictions and the 1/6 hand case") {
    const auto gold = labels({0, 1, 2});
    CHECK(macro_f1(confusion(gold, gold)) == doctest::Approx(1.0).epsilon(1e-12));

    // gold [AP,IP,SB], pred [AP,AP,AP]: F1(AP)=0.5, others 0 -> exactly 1/6.
    const double f1 = macro_f1(confusion(gold, labels({0, 0, 0})));
    CHECK(f1 == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("macro_f1: fixed matrix against the flat oracle") {
    // counts [[2,1,0],[0,1,0],[1,0,1]] as label sequences.
    std::vector<BreakLabel> gold, pred;
    auto push = [&](int g, int p, int n) {
        for (int i = 0; i < n; ++i) {
            gold.push_back(static_cast<BreakLabel>(g));
            pred.push_back(static_cast<BreakLabel>(p));
        }
    };
    push(0, 0, 2);
    push(0, 1, 1);
    push(1, 1, 1);
    push(2, 0, 1);
    push(2, 2, 1);
    const auto m = confusion(gold, pred);
    CHECK(m.counts[0][0] == 2);
    CHECK(m.counts[0][1] == 1);
    CHECK(m.counts[1][1] == 1);
    CHECK(m.counts[2][0] == 1);
    CHECK(m.counts[2][2] == 1);
    CHECK(macro_f1(m) == doctest::Approx(flat_macro_f1(gold, pred)).epsilon(1e-12));
}

TEST_CASE("macro_f1 equals the flat reimplementation on 1000 random sequences") {
    CounterRng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(40);
        std::vector<BreakLabel> gold, pred;
        for (std::size_t i = 0; i < n; ++i) {
            gold.push_back(static_cast<BreakLabel>(rng.uniform_int(3)));
            pred.push_back(static_cast<BreakLabel>(rng.uniform_int(3)));
        }
        const double ours = macro_f1(confusion(gold, pred));
        const double flat = flat_macro_f1(gold, pred);
        CHECK(std::abs(ours - flat) <= 1e-12);
        CHECK(ours >= 0.0);
        CHECK(ours <= 1.0);
    }
}

TEST_CASE("macro_f1 is invariant under consistent class relabeling") {
    CounterRng rng(7);
    const std::array<std::array<int, 3>, 6> perms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 5 + rng.uniform_int(30);
        std::vector<BreakLabel> gold, pred;
        for (std::size_t i = 0; i < n; ++i) {
            gold.push_back(static_cast<BreakLabel>(rng.uniform_int(3)));
            pred.push_back(static_cast<BreakLabel>(rng.uniform_int(3)));
        }
        const double base = macro_f1(confusion(gold, pred));
        for (const auto& perm : perms) {
            std::vector<BreakLabel> g2, p2;
            for (std::size_t i = 0; i < n; ++i) {
                g2.push_back(static_cast<BreakLabel>(perm[static_cast<std::size_t>(gold[i])]));
                p2.push_back(static_cast<BreakLabel>(perm[static_cast<std::size_t>(pred[i])]));
            }
            CHECK(macro_f1(confusion(g2, p2)) == doctest::Approx(base).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero-support rule: class absent from both sides leaves the mean") {
    // Only AP and IP appear anywhere: SB is excluded, not scored as zero.
    const auto m = confusion(labels({0, 1}), labels({0, 1}));
    CHECK(macro_f1(m) == doctest::Approx(1.0).epsilon(1e-12));

    // SB present in gold only: it now contributes F1 = 0.
    const auto m2 = confusion(labels({0, 1, 2}), labels({0, 1, 1}));
    const auto report = report_from_confusion(m2);
    CHECK(report.f1[2] == 0.0);
    CHECK(report.macro_f1 < 1.0);
}

TEST_CASE("report: per-class values, support, serialization") {
    const auto m = confusion(labels({0, 0, 1, 2}), labels({0, 1, 1, 2}));
    const auto report = report_from_confusion(m, 3);
    CHECK(report.support[0] == 2);
    CHECK(report.support[1] == 1);
    CHECK(report.support[2] == 1);
    CHECK(report.juncture_count == 4);
    CHECK(report.truncated_junctures == 3);
    CHECK(report.precision[0] == doctest::Approx(1.0));
    CHECK(report.recall[0] == doctest::Approx(0.5));
    CHECK(report.macro_f1 ==
          doctest::Approx((report.f1[0] + report.f1[1] + report.f1[2]) / 3.0).epsilon(1e-12));

    const std::string kv = to_kv_text(report);
    CHECK(kv.find("macro_f1=") == 0);
    CHECK(kv.find("truncated_junctures=3") != std::string::npos);
    const std::string row = to_csv_row(report);
    CHECK(std::count(row.begin(), row.end(), ',') == 11);
}

TEST_CASE("constant-AP predictor: macro-F1 far below accuracy under class imbalance") {
    // Table-1-like ratios: 84% AP.
    CounterRng rng(5);
    std::vector<BreakLabel> gold;
    for (int i = 0; i < 5000; ++i) {
        const double u = rng.uniform();
        gold.push_back(u < 0.842 ? BreakLabel::AP : (u < 0.919 ? BreakLabel::IP : BreakLabel::SB));
    }
    const std::vector<BreakLabel> pred(gold.size(), BreakLabel::AP);
    const auto m = confusion(gold, pred);
    double accuracy = double(m.counts[0][0]) / double(m.total());
    const double macro = macro_f1(m);
    CHECK(accuracy > 0.8);
    CHECK(macro < 0.35);
    CHECK(macro < accuracy - 0.4);
}

#pragma once

// Shared test utilities. The finite-difference checker and the flat
// macro-F1 reimplementation are independent oracles: they must not call
// back into the code paths they verify.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pbp/corpus.hpp"
#include "pbp/metrics.hpp"
#include "pbp/numerics.hpp"

namespace pbp::testing {

// Central finite differences of scalar_fn against the analytic gradients
// already accumulated on the tensors. scalar_fn must recompute the loss
// from the tensors' current values without touching any tape.
inline double max_grad_rel_error(std::vector<Tensor> tensors,
                                 const std::function<double()>& scalar_fn, double step = 1e-5) {
    double worst = 0.0;
    for (auto& t : tensors) {
        const auto& analytic = t.grad();
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t.values()[i];
            t.values()[i] = saved + step;
            const double up = scalar_fn();
            t.values()[i] = saved - step;
            const double down = scalar_fn();
            t.values()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err =
                std::abs(analytic[i] - numeric) /
                std::max({1e-6, std::abs(analytic[i]), std::abs(numeric)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// Independent flat macro-F1: per-class precision/recall straight from the
// label sequences, zero-support classes (absent on both sides) excluded.
inline double flat_macro_f1(const std::vector<BreakLabel>& gold,
                            const std::vector<BreakLabel>& pred) {
    double f1_sum = 0.0;
    int classes = 0;
    for (int c = 0; c < kNumBreakClasses; ++c) {
        std::size_t tp = 0, in_gold = 0, in_pred = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            const bool g = static_cast<int>(gold[i]) == c;
            const bool p = static_cast<int>(pred[i]) == c;
            if (g) ++in_gold;
            if (p) ++in_pred;
            if (g && p) ++tp;
        }
        if (in_gold == 0 && in_pred == 0) continue;
        const double precision = in_pred == 0 ? 0.0 : double(tp) / double(in_pred);
        const double recall = in_gold == 0 ? 0.0 : double(tp) / double(in_gold);
        const double f1 =
            precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        f1_sum += f1;
        ++classes;
    }
    return classes == 0 ? 0.0 : f1_sum / classes;
}

inline Utterance make_utterance(const std::string& id, const std::string& lang,
                                std::vector<std::string> words,
                                std::vector<BreakLabel> junctures) {
    Utterance u;
    u.id = id;
    u.lang = lang;
    u.words = std::move(words);
    u.junctures = std::move(junctures);
    return u;
}

// n words "w0".."wn-1", all-AP junctures with a final SB.
inline Utterance simple_utterance(const std::string& id, std::size_t n,
                                  const std::string& lang = "en") {
    std::vector<std::string> words;
    std::vector<BreakLabel> junctures;
    for (std::size_t i = 0; i < n; ++i) {
        words.push_back("w" + std::to_string(i));
        junctures.push_back(i + 1 == n ? BreakLabel::SB : BreakLabel::AP);
    }
    return make_utterance(id, lang, std::move(words), std::move(junctures));
}

}  // namespace pbp::testing

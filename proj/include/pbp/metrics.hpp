#pragma once

#include <array>
#include <string>
#include <vector>

#include "pbp/corpus.hpp"

namespace pbp {

struct ModelCheckpoint;
class WordPieceVocab;

// 3x3 tally with rows = gold class, columns = predicted class.
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumBreakClasses>, kNumBreakClasses> counts{};

    std::size_t total() const;
    std::size_t row_sum(int gold) const;
    std::size_t col_sum(int pred) const;
};

ConfusionMatrix confusion(const std::vector<BreakLabel>& gold,
                          const std::vector<BreakLabel>& pred);
void accumulate(ConfusionMatrix& m, const std::vector<BreakLabel>& gold,
                const std::vector<BreakLabel>& pred);

// Unweighted mean of per-class F1. A zero denominator makes the affected
// precision/recall/F1 zero; a class absent from both gold and predictions
// is left out of the mean entirely.
double macro_f1(const ConfusionMatrix& m);

struct EvalReport {
    double macro_f1 = 0.0;
    std::array<double, kNumBreakClasses> precision{};
    std::array<double, kNumBreakClasses> recall{};
    std::array<double, kNumBreakClasses> f1{};
    std::array<std::size_t, kNumBreakClasses> support{};
    std::size_t juncture_count = 0;
    std::size_t truncated_junctures = 0;  // excluded from scoring
    ConfusionMatrix matrix;
};

EvalReport report_from_confusion(const ConfusionMatrix& m, std::size_t truncated_junctures = 0);

// Encodes the dataset, predicts with the checkpoint in evaluation mode
// (argmax per juncture) and tallies word-level junctures. Junctures lost
// to truncation are excluded and counted separately.
EvalReport evaluate(const ModelCheckpoint& ckpt, const WordPieceVocab& vocab,
                    const std::vector<Utterance>& dataset);

// Key-value text form (one `key=value` per line) and a single CSV row.
std::string to_kv_text(const EvalReport& report);
std::string to_csv_row(const EvalReport& report);

}  // namespace pbp

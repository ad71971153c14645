#include "pbp/metrics.hpp"

#include <cstdio>
#include <stdexcept>

#include "pbp/model.hpp"
#include "pbp/tokenizer.hpp"

namespace pbp {

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : counts) {
        for (std::size_t v : row) n += v;
    }
    return n;
}

std::size_t ConfusionMatrix::row_sum(int gold) const {
    std::size_t n = 0;
    for (std::size_t v : counts[static_cast<std::size_t>(gold)]) n += v;
    return n;
}

std::size_t ConfusionMatrix::col_sum(int pred) const {
    std::size_t n = 0;
    for (const auto& row : counts) n += row[static_cast<std::size_t>(pred)];
    return n;
}

void accumulate(ConfusionMatrix& m, const std::vector<BreakLabel>& gold,
                const std::vector<BreakLabel>& pred) {
    if (gold.size() != pred.size()) {
        throw std::runtime_error("confusion: gold/pred length mismatch (" +
                                 std::to_string(gold.size()) + " vs " +
                                 std::to_string(pred.size()) + ")");
    }
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++m.counts[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(pred[i])];
    }
}

ConfusionMatrix confusion(const std::vector<BreakLabel>& gold,
                          const std::vector<BreakLabel>& pred) {
    ConfusionMatrix m;
    accumulate(m, gold, pred);
    return m;
}

double macro_f1(const ConfusionMatrix& m) {
    return report_from_confusion(m).macro_f1;
}

EvalReport report_from_confusion(const ConfusionMatrix& m, std::size_t truncated_junctures) {
    if (m.total() == 0) throw std::runtime_error("macro_f1: empty confusion matrix");

    EvalReport report;
    report.matrix = m;
    report.juncture_count = m.total();
    report.truncated_junctures = truncated_junctures;

    double f1_sum = 0.0;
    int f1_classes = 0;
    for (int c = 0; c < kNumBreakClasses; ++c) {
        const std::size_t sc = static_cast<std::size_t>(c);
        const std::size_t tp = m.counts[sc][sc];
        const std::size_t gold_n = m.row_sum(c);
        const std::size_t pred_n = m.col_sum(c);
        report.support[sc] = gold_n;
        report.precision[sc] = pred_n == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pred_n);
        report.recall[sc] = gold_n == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold_n);
        const double pr = report.precision[sc] + report.recall[sc];
        report.f1[sc] = pr == 0.0 ? 0.0 : 2.0 * report.precision[sc] * report.recall[sc] / pr;
        if (gold_n == 0 && pred_n == 0) continue;  // class never seen on either side
        f1_sum += report.f1[sc];
        ++f1_classes;
    }
    report.macro_f1 = f1_classes == 0 ? 0.0 : f1_sum / static_cast<double>(f1_classes);
    return report;
}

EvalReport evaluate(const ModelCheckpoint& ckpt, const WordPieceVocab& vocab,
                    const std::vector<Utterance>& dataset) {
    if (dataset.empty()) throw std::runtime_error("evaluate: empty dataset");

    ConfusionMatrix m;
    std::size_t truncated = 0;
    constexpr std::size_t kEvalBatch = 32;

    std::vector<Encoding> batch;
    std::vector<const Utterance*> batch_utts;
    auto flush = [&]() {
        if (batch.empty()) return;
        const auto dists = predict_breaks(ckpt, batch);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& enc = batch[i];
            const auto& gold_all = batch_utts[i]->junctures;
            std::vector<BreakLabel> gold(gold_all.begin(),
                                         gold_all.begin() + static_cast<std::ptrdiff_t>(
                                                                enc.label_slots.size()));
            std::vector<BreakLabel> pred;
            pred.reserve(enc.label_slots.size());
            for (std::size_t s = 0; s < enc.label_slots.size(); ++s) {
                const auto& dist = dists[i][s];
                int best = 0;
                for (int c = 1; c < kNumBreakClasses; ++c) {
                    if (dist[static_cast<std::size_t>(c)] > dist[static_cast<std::size_t>(best)]) best = c;
                }
                pred.push_back(static_cast<BreakLabel>(best));
            }
            truncated += gold_all.size() - gold.size();
            accumulate(m, gold, pred);
        }
        batch.clear();
        batch_utts.clear();
    };

    for (const auto& u : dataset) {
        batch.push_back(encode_utterance(vocab, u, ckpt.config.max_positions));
        batch_utts.push_back(&u);
        if (batch.size() == kEvalBatch) flush();
    }
    flush();
    return report_from_confusion(m, truncated);
}

namespace {

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string to_kv_text(const EvalReport& r) {
    std::string out;
    out += "macro_f1=" + fmt2(100.0 * r.macro_f1) + "\n";
    static const char* names[] = {"ap", "ip", "sb"};
    for (int c = 0; c < kNumBreakClasses; ++c) {
        const auto sc = static_cast<std::size_t>(c);
        out += std::string(names[sc]) + "_precision=" + fmt2(100.0 * r.precision[sc]) + "\n";
        out += std::string(names[sc]) + "_recall=" + fmt2(100.0 * r.recall[sc]) + "\n";
        out += std::string(names[sc]) + "_f1=" + fmt2(100.0 * r.f1[sc]) + "\n";
        out += std::string(names[sc]) + "_support=" + std::to_string(r.support[sc]) + "\n";
    }
    out += "junctures=" + std::to_string(r.juncture_count) + "\n";
    out += "truncated_junctures=" + std::to_string(r.truncated_junctures) + "\n";
    return out;
}

std::string to_csv_row(const EvalReport& r) {
    std::string out = fmt2(100.0 * r.macro_f1);
    for (int c = 0; c < kNumBreakClasses; ++c) {
        const auto sc = static_cast<std::size_t>(c);
        out += "," + fmt2(100.0 * r.precision[sc]) + "," + fmt2(100.0 * r.recall[sc]) + "," +
               fmt2(100.0 * r.f1[sc]);
    }
    out += "," + std::to_string(r.juncture_count) + "," + std::to_string(r.truncated_junctures);
    return out;
}

}  // namespace pbp

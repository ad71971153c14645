#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pbp/corpus.hpp"
#include "pbp/model.hpp"
#include "pbp/tokenizer.hpp"

namespace pbp {

struct TrainConfig {
    std::size_t batch_size = 16;
    double learning_rate = 5e-5;
    double dropout = 0.1;
    std::size_t epochs = 5;
    std::size_t max_len = kDefaultMaxLen;
    std::uint64_t seed = 0;
    // Small-k guard: tiny training sets are cycled within each epoch until
    // at least this many optimizer steps happen over the whole run.
    std::size_t min_steps = 20;
    double clip_norm = 0.0;  // 0 disables gradient clipping

    void validate() const;
};

// Adam moment buffers for a fixed parameter list.
struct AdamState {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step_count = 0;

    static AdamState for_params(const std::vector<std::pair<std::string, Tensor>>& params);
};

// One bias-corrected Adam update over the parameters' accumulated
// gradients. A non-finite gradient aborts the whole step: nothing is
// mutated and false is returned.
bool adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state, double lr);

// Scales all gradients so their global L2 norm is at most max_norm.
void clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

struct TrainHistory {
    std::vector<double> train_loss;    // per-epoch mean step loss
    std::vector<double> val_macro_f1;  // per-epoch validation score (empty when no validation)
    std::size_t selected_epoch = 0;    // argmax of val_macro_f1, earliest on ties
    std::size_t total_steps = 0;
};

std::string history_csv(const TrainHistory& history);

struct FineTuneResult {
    ModelCheckpoint checkpoint;  // weights from the selected epoch
    TrainHistory history;
};

// Shuffled mini-batch fine-tuning of the classification head (and the
// whole encoder) with per-epoch validation selection by macro-F1. With an
// empty validation set, selection is disabled and the final epoch wins.
FineTuneResult fine_tune(const ModelCheckpoint& start, const WordPieceVocab& vocab,
                         const std::vector<Utterance>& train_set,
                         const std::vector<Utterance>& validation_set, const TrainConfig& cfg,
                         const std::string& stage_tag = "finetuned", std::ostream* log = nullptr);

// BERT-style dynamic masking: 15% of non-special positions; of those 80%
// become [MASK], 10% a random non-special id, 10% stay. Returns the
// original ids at masked positions (kIgnoreTarget elsewhere) and rewrites
// batch.ids in place. At least one position is always masked.
std::vector<int> apply_mlm_mask(Batch& batch, std::size_t vocab_size, CounterRng& rng);

// From-scratch masked-LM pretraining over the pooled multilingual
// corpus. Runs exactly `steps` optimizer steps; loss is reported to `log`
// every 100 steps.
ModelCheckpoint pretrain_mlm(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                             const std::vector<Utterance>& corpora, const WordPieceVocab& vocab,
                             std::size_t steps, std::ostream* log = nullptr);

struct GridSpec {
    std::vector<std::size_t> batch_sizes = {16, 32};
    std::vector<double> learning_rates = {2e-5, 5e-5, 5e-6};
    std::vector<double> dropouts = {0.1, 0.2};
};

struct GridPointResult {
    TrainConfig config;
    double val_macro_f1 = 0.0;
    TrainHistory history;
};

struct GridSearchResult {
    TrainConfig best;
    std::vector<GridPointResult> results;  // enumeration order: batch, lr, dropout
};

// Trains one model per grid point (seed = base seed + point index) and
// selects the highest validation macro-F1; ties go to the earliest point
// in enumeration order.
GridSearchResult grid_search(const GridSpec& grid, const ModelCheckpoint& start,
                             const WordPieceVocab& vocab, const std::vector<Utterance>& train_set,
                             const std::vector<Utterance>& validation_set,
                             const TrainConfig& base_cfg, std::ostream* log = nullptr);

}  // namespace pbp

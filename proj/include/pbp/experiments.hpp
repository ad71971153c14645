#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbp/corpus.hpp"
#include "pbp/model.hpp"
#include "pbp/training.hpp"

namespace pbp {

using CorpusMap = std::map<LanguageCode, std::vector<Utterance>>;

struct ZeroShotMatrix {
    std::vector<LanguageCode> languages;
    // Median over seeds; scores[i][j] = train languages[i], test languages[j].
    std::vector<std::vector<double>> scores;
    std::vector<std::vector<std::vector<double>>> per_seed;  // [seed][train][test]
    std::vector<std::uint64_t> seeds;

    double score(const LanguageCode& train, const LanguageCode& test) const;
};

enum class FewShotScenario { EnglishOnly, Augmented };

const char* to_string(FewShotScenario s);
std::optional<FewShotScenario> scenario_from_string(const std::string& s);

struct FewShotPoint {
    std::size_t k = 0;
    double score = 0.0;  // median over seeds
    std::vector<double> per_seed;
};

struct FewShotCurve {
    LanguageCode target;
    FewShotScenario scenario = FewShotScenario::EnglishOnly;
    double zero_shot = 0.0;  // stage-1 model on the target test set, median
    std::vector<double> zero_shot_per_seed;
    std::vector<FewShotPoint> points;  // k strictly increasing
    std::vector<std::uint64_t> seeds;
    std::vector<std::uint64_t> stage1_digests;  // per seed

    // Deltas are always recomputed from the stored scores.
    double delta(std::size_t point_index) const;
};

struct ExperimentConfig {
    std::vector<LanguageCode> languages;
    LanguageCode source;  // the high-resource language used for stage 1
    SplitSizes split;
    std::size_t source_expand = 60000;
    std::vector<std::size_t> k_schedule = {4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096};
    TrainConfig train;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    bool stage2_mix_source = false;  // mix the stage-1 composite back into stage 2
    std::size_t jobs = 1;

    void validate() const;
};

// Deterministic per-language split, identical across experiment families
// so zero-shot and few-shot runs see the same data.
std::map<LanguageCode, DatasetSplit> make_splits(const ExperimentConfig& cfg,
                                                 const CorpusMap& corpora);

// Fine-tunes one model per (seed, train language) from the pretrained
// checkpoint and evaluates it on every language's test split.
ZeroShotMatrix run_zero_shot_matrix(const ExperimentConfig& cfg, const ModelCheckpoint& pretrained,
                                    const WordPieceVocab& vocab, const CorpusMap& corpora,
                                    std::ostream* log = nullptr);

// Stage-1 training pool. EnglishOnly: the source corpus uniformly
// subsampled to expand_to (the full pool, with a note, when smaller).
// Augmented: that plus the train split of every other non-target
// language. Never contains target-language data.
std::vector<Utterance> build_stage1_composite(FewShotScenario scenario, const LanguageCode& source,
                                              const LanguageCode& target, const CorpusMap& corpora,
                                              const std::map<LanguageCode, DatasetSplit>& splits,
                                              std::size_t expand_to, std::uint64_t seed,
                                              std::ostream* log = nullptr);

// Two-step fine-tuning: stage 1 on the scenario composite (recording the
// zero-shot score on the target test set), then for each k a stage-2
// fine-tune on the k nested target samples, all repeated per seed.
FewShotCurve run_few_shot_curve(const ExperimentConfig& cfg, FewShotScenario scenario,
                                const LanguageCode& target, const ModelCheckpoint& pretrained,
                                const WordPieceVocab& vocab, const CorpusMap& corpora,
                                std::ostream* log = nullptr);

// Table renderings (percentages, two decimals).
std::string zero_shot_csv(const ZeroShotMatrix& m);
std::string few_shot_csv(const FewShotCurve& curve);
// Self-contained SVG, k on a log axis, one line per scenario.
std::string few_shot_svg(const std::vector<FewShotCurve>& curves);

// Writes the CSV table plus a JSON result record (config, seeds, per-run
// scores, checkpoint digests); curves additionally get the SVG plot.
std::vector<std::string> export_zero_shot(const ZeroShotMatrix& m, const ExperimentConfig& cfg,
                                          const std::string& out_dir);
std::vector<std::string> export_few_shot(const std::vector<FewShotCurve>& curves,
                                         const ExperimentConfig& cfg, const std::string& out_dir);

double median(std::vector<double> values);

// Deterministic static-partition parallel loop; results must be written
// to per-index slots. jobs <= 1 runs inline.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace pbp

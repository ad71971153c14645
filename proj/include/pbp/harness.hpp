#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbp/corpus.hpp"
#include "pbp/experiments.hpp"
#include "pbp/model.hpp"
#include "pbp/training.hpp"

namespace pbp {

// Thrown for bad flags, config schema violations and missing inputs;
// the CLI maps it to exit code 1 (runtime failures exit 2).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SynthLanguageEntry {
    SynthLanguageSpec spec;
    std::size_t count = 0;  // utterances to generate
};

// Fully resolved run configuration. load_config() materializes every
// default, so dump() -> parse -> dump is the identity.
struct HarnessConfig {
    std::string out_dir = "runs/out";
    std::uint64_t seed = 2026;
    std::vector<SynthLanguageEntry> languages;
    std::size_t vocab_size = 8000;
    std::size_t vocab_min_frequency = 2;
    ModelConfig model;       // model.vocab_size is taken from the trained vocabulary
    TrainConfig train;
    std::size_t pretrain_steps = 2000;
    TrainConfig pretrain;
    ExperimentConfig experiment;
    GridSpec grid;

    const SynthLanguageEntry* find_language(const LanguageCode& name) const;
};

HarnessConfig load_config(const std::string& path);
HarnessConfig parse_config(const std::string& json_text, const std::string& origin);
std::string dump_config(const HarnessConfig& cfg);

std::string file_digest_hex(const std::string& path);

// Reproducibility record written next to every command's outputs.
struct RunManifest {
    std::string command;
    std::string config_json;  // resolved config, when the command takes one
    std::map<std::string, std::string> input_digests;
    std::vector<std::string> outputs;
    std::vector<std::uint64_t> seeds;
    std::string started_at;
    double wall_seconds = 0.0;
};

void write_manifest(const RunManifest& manifest, const std::string& dir);

// Command implementations behind the CLI; all throw on failure.
void cmd_gen_synth(const HarnessConfig& cfg, const std::string& lang,
                   std::optional<std::size_t> count, const std::string& out_path);
void cmd_build_vocab(const std::vector<std::string>& corpus_files, std::size_t size,
                     std::size_t min_frequency, const std::string& out_path);
void cmd_pretrain(const HarnessConfig& cfg, const std::string& vocab_path,
                  const std::vector<std::string>& corpus_files, std::optional<std::size_t> steps,
                  const std::string& out_path);
void cmd_train(const HarnessConfig& cfg, const std::string& vocab_path,
               const std::string& start_ckpt, const std::string& train_file,
               const std::string& val_file, const std::string& out_path);
void cmd_eval(const std::string& ckpt_path, const std::string& vocab_path,
              const std::string& test_file, const std::string& out_path);
void cmd_stats(const std::vector<std::string>& corpus_files, const std::string& vocab_path,
               const std::string& out_path);
void cmd_zeroshot(const HarnessConfig& cfg);
void cmd_fewshot(const HarnessConfig& cfg, const std::string& scenario,
                 const LanguageCode& target);
void cmd_gridsearch(const HarnessConfig& cfg);

// Shared pipeline prerequisites (corpora, vocabulary, pretrained
// checkpoint) under cfg.out_dir, rebuilt only when the relevant part of
// the config or any artifact changed.
struct PipelineArtifacts {
    CorpusMap corpora;
    WordPieceVocab vocab;
    ModelCheckpoint pretrained;
    std::map<std::string, std::string> digests;  // artifact path -> hex digest
};

PipelineArtifacts ensure_artifacts(const HarnessConfig& cfg, std::ostream* log);

// Generates every configured language, honoring parent links.
CorpusMap generate_all_languages(const HarnessConfig& cfg);

}  // namespace pbp

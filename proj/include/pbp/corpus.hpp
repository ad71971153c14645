#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace pbp {

class WordPieceVocab;

// Break label carried by every word juncture. The three classes are
// exhaustive: there is no separate "no break" class.
enum class BreakLabel : int { AP = 0, IP = 1, SB = 2 };

constexpr int kNumBreakClasses = 3;

const char* to_string(BreakLabel label);
std::optional<BreakLabel> break_label_from_string(const std::string& s);

// Short language identifier such as "en" or "synA".
using LanguageCode = std::string;
bool valid_language_code(const LanguageCode& code);

// One labeled sentence: words[i] is followed by the juncture junctures[i].
// The final juncture is always SB, and SB appears nowhere else.
struct Utterance {
    std::string id;
    LanguageCode lang;
    std::vector<std::string> words;
    std::vector<BreakLabel> junctures;
};

struct ValidationReport {
    std::vector<std::string> violations;
    std::vector<std::string> warnings;
    bool ok() const { return violations.empty(); }
};

ValidationReport validate_utterance(const Utterance& u);

// Reads a JSON-lines corpus file. Throws on I/O failure, malformed lines
// (message carries the line number) and invariant violations (message
// carries the utterance id).
std::vector<Utterance> load_corpus(const std::string& path);
void save_corpus(const std::vector<Utterance>& corpus, const std::string& path);

// Single JSON-line forms used by the file format above.
std::string utterance_to_json_line(const Utterance& u);
Utterance utterance_from_json_line(const std::string& line);

struct DatasetSplit {
    std::vector<Utterance> train;
    std::vector<Utterance> validation;
    std::vector<Utterance> test;
};

struct SplitSizes {
    std::size_t train = 6000;
    std::size_t validation = 200;
    std::size_t test = 200;
    std::size_t total() const { return train + validation + test; }
};

// Uniform draw without replacement, deterministic in seed.
DatasetSplit split_dataset(const std::vector<Utterance>& corpus, SplitSizes sizes,
                           std::uint64_t seed);

// First k entries of a seed-determined permutation, so the k-sample is a
// prefix of the 2k-sample under the same seed.
std::vector<Utterance> sample_few_shot(const std::vector<Utterance>& corpus, std::size_t k,
                                       std::uint64_t seed);

struct CorpusStats {
    std::size_t utterance_count = 0;
    double ratio_to_reference = 0.0;
    double subwords_mean = 0.0;
    double subwords_sd = 0.0;
    double subword_len_mean = 0.0;
    double subword_len_sd = 0.0;
    std::array<double, kNumBreakClasses> label_ratio{};  // AP, IP, SB; sums to 1
};

CorpusStats compute_stats(const std::vector<Utterance>& corpus, const WordPieceVocab& vocab,
                          std::size_t reference_count);

// Writes one CSV row per (language, stats) pair in the given order.
void write_stats_csv(std::ostream& out,
                     const std::vector<std::pair<LanguageCode, CorpusStats>>& rows);

struct BreakGrammarParams {
    std::array<double, kNumBreakClasses> target_ratio{0.842, 0.077, 0.081};
    double mean_phrase_len = 6.0;  // words between non-AP breaks, gates IP placement
    double label_noise = 0.05;
};

// Recipe for one synthetic language. A child spec shares `overlap` of its
// lexicon and grammar parameters with its parent; overlap 1.0 reproduces
// the parent's distribution exactly while the child seed still drives
// which sentences get sampled.
struct SynthLanguageSpec {
    LanguageCode name;
    std::size_t lexicon_size = 1200;
    std::optional<LanguageCode> parent;
    double overlap = 0.0;
    BreakGrammarParams break_grammar;
    std::array<std::size_t, 2> length_range{4, 25};
    std::uint64_t seed = 0;
};

std::vector<Utterance> generate_synthetic_language(const SynthLanguageSpec& spec, std::size_t n);

// Variant for child languages: the parent spec must be the one named by
// spec.parent.
std::vector<Utterance> generate_synthetic_language(const SynthLanguageSpec& spec, std::size_t n,
                                                   const SynthLanguageSpec* parent_spec);

}  // namespace pbp

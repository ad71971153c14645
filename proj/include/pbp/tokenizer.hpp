#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbp/corpus.hpp"
#include "pbp/numerics.hpp"

namespace pbp {

// Shared multilingual WordPiece vocabulary. Ids are line numbers in the
// vocabulary file; the first five ids are the fixed specials. Word-internal
// pieces carry the "##" prefix. Both the bare and "##" form of every
// character seen at training time are present, so UNK can only arise from
// characters never seen in training.
class WordPieceVocab {
public:
    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;
    static constexpr int kClsId = 2;
    static constexpr int kSepId = 3;
    static constexpr int kMaskId = 4;
    static constexpr int kNumSpecials = 5;

    WordPieceVocab() = default;
    explicit WordPieceVocab(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    // -1 when absent.
    int id_of(const std::string& token) const;

    void save(const std::string& path) const;
    static WordPieceVocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// Builds the shared vocabulary over the pooled corpora by iterative pair
// merging on word-frequency counts. The budget `target_size` covers the 5
// specials, one alphabet unit per distinct character, and the merges; the
// highest-count pair wins each round, ties broken lexicographically, and
// merging stops early when no pair reaches `min_frequency`.
WordPieceVocab train_vocab(const std::vector<Utterance>& corpora, std::size_t target_size,
                           std::size_t min_frequency, std::uint64_t seed);

// Greedy longest-prefix-match segmentation; whole word becomes [UNK] when
// some character has no vocabulary entry.
std::vector<int> encode_word(const WordPieceVocab& vocab, const std::string& word);

struct Encoding {
    std::vector<int> ids;          // CLS + pieces + SEP, length <= max_len
    std::vector<int> word_index;   // source word per position, -1 for specials
    std::vector<int> label_slots;  // position of the last piece of each surviving word
    bool truncated = false;
    std::size_t total_words = 0;   // word count before truncation
};

constexpr std::size_t kDefaultMaxLen = 128;

Encoding encode_utterance(const WordPieceVocab& vocab, const Utterance& u,
                          std::size_t max_len = kDefaultMaxLen);

// Per-position class targets: label slots carry their word's juncture
// class, everything else the ignore marker. Junctures must match the
// encoded utterance's original word count.
std::vector<int> align_labels(const Encoding& enc, const std::vector<BreakLabel>& junctures);

}  // namespace pbp

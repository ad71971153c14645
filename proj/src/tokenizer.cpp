#include "pbp/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace pbp {

namespace {

const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

// Byte offsets of codepoint starts, plus one-past-the-end.
std::vector<std::size_t> codepoint_offsets(const std::string& s) {
    std::vector<std::size_t> offs;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) offs.push_back(i);
    }
    offs.push_back(s.size());
    return offs;
}

}  // namespace

WordPieceVocab::WordPieceVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kNumSpecials) {
        throw std::runtime_error("vocabulary must contain the five special tokens");
    }
    for (int i = 0; i < kNumSpecials; ++i) {
        if (tokens_[static_cast<std::size_t>(i)] != kSpecials[i]) {
            throw std::runtime_error("vocabulary id " + std::to_string(i) + " must be " +
                                     kSpecials[i]);
        }
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw std::runtime_error("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

int WordPieceVocab::id_of(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

void WordPieceVocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
    for (const auto& t : tokens_) out << t << '\n';
    if (!out) throw std::runtime_error("I/O error while writing " + path);
}

WordPieceVocab WordPieceVocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(line);
    return WordPieceVocab(std::move(tokens));
}

WordPieceVocab train_vocab(const std::vector<Utterance>& corpora, std::size_t target_size,
                           std::size_t min_frequency, std::uint64_t /*seed*/) {
    if (corpora.empty()) throw std::runtime_error("train_vocab: empty corpora");

    // Word-type frequencies, in deterministic (sorted) order.
    std::map<std::string, long long> word_freq;
    for (const auto& u : corpora) {
        for (const auto& w : u.words) ++word_freq[w];
    }

    // Intern symbols. A word is its first codepoint bare plus "##"-prefixed
    // continuations.
    std::vector<std::string> symbols;
    std::unordered_map<std::string, int> symbol_ids;
    auto intern = [&](const std::string& s) {
        const auto it = symbol_ids.find(s);
        if (it != symbol_ids.end()) return it->second;
        symbols.push_back(s);
        symbol_ids.emplace(s, static_cast<int>(symbols.size() - 1));
        return static_cast<int>(symbols.size() - 1);
    };

    std::set<std::string> alphabet;  // distinct characters, sorted
    struct WordEntry {
        std::vector<int> syms;
        long long freq;
    };
    std::vector<WordEntry> words;
    words.reserve(word_freq.size());
    for (const auto& [word, freq] : word_freq) {
        const auto offs = codepoint_offsets(word);
        WordEntry entry;
        entry.freq = freq;
        for (std::size_t i = 0; i + 1 < offs.size(); ++i) {
            const std::string ch = word.substr(offs[i], offs[i + 1] - offs[i]);
            alphabet.insert(ch);
            entry.syms.push_back(intern(i == 0 ? ch : "##" + ch));
        }
        words.push_back(std::move(entry));
    }

    if (target_size < alphabet.size() + WordPieceVocab::kNumSpecials) {
        throw std::runtime_error("train_vocab: target_size " + std::to_string(target_size) +
                                 " cannot hold " + std::to_string(alphabet.size()) +
                                 " characters plus specials");
    }

    // Pair bookkeeping: counts and the set of word types containing each pair.
    const auto pack = [](int a, int b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
               static_cast<std::uint32_t>(b);
    };
    std::unordered_map<std::uint64_t, long long> pair_count;
    std::unordered_map<std::uint64_t, std::unordered_set<std::size_t>> pair_words;
    auto bump = [&](int a, int b, long long delta, std::size_t word_idx) {
        const std::uint64_t key = pack(a, b);
        pair_count[key] += delta;
        if (delta > 0) {
            pair_words[key].insert(word_idx);
        }
    };
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
        const auto& syms = words[wi].syms;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            bump(syms[i], syms[i + 1], words[wi].freq, wi);
        }
    }

    struct HeapEntry {
        long long count;
        std::string a, b;
        std::uint64_t key;
    };
    const auto worse = [](const HeapEntry& x, const HeapEntry& y) {
        if (x.count != y.count) return x.count < y.count;
        if (x.a != y.a) return x.a > y.a;
        return x.b > y.b;
    };
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, decltype(worse)> heap(worse);
    for (const auto& [key, count] : pair_count) {
        const int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffff);
        heap.push({count, symbols[static_cast<std::size_t>(a)],
                   symbols[static_cast<std::size_t>(b)], key});
    }

    std::vector<std::string> merge_tokens;
    const std::size_t merge_budget =
        target_size - alphabet.size() - WordPieceVocab::kNumSpecials;

    while (merge_tokens.size() < merge_budget && !heap.empty()) {
        const HeapEntry top = heap.top();
        heap.pop();
        const auto it = pair_count.find(top.key);
        if (it == pair_count.end() || it->second != top.count || it->second <= 0) continue;
        if (top.count < static_cast<long long>(min_frequency)) break;

        const int a = static_cast<int>(top.key >> 32);
        const int b = static_cast<int>(top.key & 0xffffffff);
        const std::string& sb = symbols[static_cast<std::size_t>(b)];
        const std::string merged =
            symbols[static_cast<std::size_t>(a)] + (sb.rfind("##", 0) == 0 ? sb.substr(2) : sb);
        const int merged_id = intern(merged);
        merge_tokens.push_back(merged);

        // Rewrite every word type containing the pair; update counts around
        // each replacement.
        const auto touched = pair_words[top.key];  // copy: bump() mutates the map
        std::unordered_set<std::uint64_t> dirty;
        for (std::size_t wi : touched) {
            auto& syms = words[wi].syms;
            const long long freq = words[wi].freq;
            std::vector<int> out;
            out.reserve(syms.size());
            std::size_t i = 0;
            bool changed = false;
            while (i < syms.size()) {
                if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
                    if (!out.empty()) {
                        bump(out.back(), a, -freq, wi);
                        bump(out.back(), merged_id, freq, wi);
                        dirty.insert(pack(out.back(), a));
                        dirty.insert(pack(out.back(), merged_id));
                    }
                    if (i + 2 < syms.size()) {
                        bump(b, syms[i + 2], -freq, wi);
                        bump(merged_id, syms[i + 2], freq, wi);
                        dirty.insert(pack(b, syms[i + 2]));
                        dirty.insert(pack(merged_id, syms[i + 2]));
                    }
                    out.push_back(merged_id);
                    i += 2;
                    changed = true;
                } else {
                    out.push_back(syms[i]);
                    ++i;
                }
            }
            if (changed) syms = std::move(out);
        }
        pair_count.erase(top.key);
        pair_words.erase(top.key);
        for (std::uint64_t key : dirty) {
            const auto cit = pair_count.find(key);
            if (cit == pair_count.end() || cit->second <= 0) continue;
            const int ka = static_cast<int>(key >> 32), kb = static_cast<int>(key & 0xffffffff);
            heap.push({cit->second, symbols[static_cast<std::size_t>(ka)],
                       symbols[static_cast<std::size_t>(kb)], key});
        }
    }

    std::vector<std::string> tokens;
    tokens.reserve(WordPieceVocab::kNumSpecials + 2 * alphabet.size() + merge_tokens.size());
    for (const char* s : kSpecials) tokens.emplace_back(s);
    for (const auto& ch : alphabet) tokens.push_back(ch);
    for (const auto& ch : alphabet) tokens.push_back("##" + ch);
    for (auto& m : merge_tokens) {
        tokens.push_back(std::move(m));
    }
    // A merge can coincide with an alphabet form only if it IS one, which
    // cannot happen (merges have length >= 2 codepoints), so ids are unique.
    return WordPieceVocab(std::move(tokens));
}

std::vector<int> encode_word(const WordPieceVocab& vocab, const std::string& word) {
    if (word.empty()) throw std::runtime_error("encode_word: empty word");
    const auto offs = codepoint_offsets(word);
    const std::size_t ncp = offs.size() - 1;

    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < ncp) {
        int match = -1;
        std::size_t match_end = pos;
        for (std::size_t end = ncp; end > pos; --end) {
            std::string cand = word.substr(offs[pos], offs[end] - offs[pos]);
            if (pos > 0) cand = "##" + cand;
            const int id = vocab.id_of(cand);
            if (id >= 0) {
                match = id;
                match_end = end;
                break;
            }
        }
        if (match < 0) return {WordPieceVocab::kUnkId};
        ids.push_back(match);
        pos = match_end;
    }
    return ids;
}

Encoding encode_utterance(const WordPieceVocab& vocab, const Utterance& u, std::size_t max_len) {
    if (max_len < 3) throw std::runtime_error("encode_utterance: max_len must be >= 3");

    Encoding enc;
    enc.total_words = u.words.size();

    std::vector<std::vector<int>> pieces;
    pieces.reserve(u.words.size());
    for (const auto& w : u.words) pieces.push_back(encode_word(vocab, w));

    const std::size_t budget = max_len - 2;
    std::size_t kept = 0, used = 0;
    while (kept < pieces.size() && used + pieces[kept].size() <= budget) {
        used += pieces[kept].size();
        ++kept;
    }
    enc.truncated = kept < pieces.size();

    enc.ids.reserve(used + 2);
    enc.word_index.reserve(used + 2);
    enc.ids.push_back(WordPieceVocab::kClsId);
    enc.word_index.push_back(-1);
    for (std::size_t w = 0; w < kept; ++w) {
        for (int id : pieces[w]) {
            enc.ids.push_back(id);
            enc.word_index.push_back(static_cast<int>(w));
        }
        enc.label_slots.push_back(static_cast<int>(enc.ids.size()) - 1);
    }
    enc.ids.push_back(WordPieceVocab::kSepId);
    enc.word_index.push_back(-1);
    return enc;
}

std::vector<int> align_labels(const Encoding& enc, const std::vector<BreakLabel>& junctures) {
    if (junctures.size() != enc.total_words) {
        throw std::runtime_error("align_labels: " + std::to_string(junctures.size()) +
                                 " junctures for " + std::to_string(enc.total_words) + " words");
    }
    std::vector<int> targets(enc.ids.size(), kIgnoreTarget);
    for (std::size_t w = 0; w < enc.label_slots.size(); ++w) {
        targets[static_cast<std::size_t>(enc.label_slots[w])] =
            static_cast<int>(junctures[w]);
    }
    return targets;
}

}  // namespace pbp

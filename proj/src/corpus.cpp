#include "pbp/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pbp/rng.hpp"
#include "pbp/tokenizer.hpp"

namespace pbp {

using ordered_json = nlohmann::ordered_json;

const char* to_string(BreakLabel label) {
    switch (label) {
        case BreakLabel::AP: return "AP";
        case BreakLabel::IP: return "IP";
        case BreakLabel::SB: return "SB";
    }
    return "?";
}

std::optional<BreakLabel> break_label_from_string(const std::string& s) {
    if (s == "AP") return BreakLabel::AP;
    if (s == "IP") return BreakLabel::IP;
    if (s == "SB") return BreakLabel::SB;
    return std::nullopt;
}

bool valid_language_code(const LanguageCode& code) {
    if (code.empty()) return false;
    for (unsigned char c : code) {
        if (!std::isalnum(c) || c > 127) return false;
    }
    return true;
}

ValidationReport validate_utterance(const Utterance& u) {
    ValidationReport report;
    auto fail = [&](const std::string& msg) { report.violations.push_back(msg); };

    if (u.id.empty()) fail("empty id");
    if (!valid_language_code(u.lang)) fail("invalid language code '" + u.lang + "'");
    if (u.words.empty()) fail("utterance has no words");
    for (std::size_t i = 0; i < u.words.size(); ++i) {
        if (u.words[i].empty()) fail("empty word at position " + std::to_string(i));
    }
    if (u.junctures.size() != u.words.size()) {
        fail("junctures/words length mismatch (" + std::to_string(u.junctures.size()) + " vs " +
             std::to_string(u.words.size()) + ")");
    } else if (!u.junctures.empty()) {
        if (u.junctures.back() != BreakLabel::SB) fail("last juncture is not SB");
        for (std::size_t i = 0; i + 1 < u.junctures.size(); ++i) {
            if (u.junctures[i] == BreakLabel::SB) {
                fail("SB before final position (position " + std::to_string(i) + ")");
            }
        }
    }
    // Curation bounds are a warning only; synthetic data may step outside.
    if (!u.words.empty() && u.words.size() < 4) report.warnings.push_back("word count below 4");
    if (u.words.size() > 25) report.warnings.push_back("word count above 25");
    return report;
}

std::string utterance_to_json_line(const Utterance& u) {
    ordered_json j;
    j["id"] = u.id;
    j["lang"] = u.lang;
    j["words"] = u.words;
    auto& breaks = j["breaks"] = ordered_json::array();
    for (BreakLabel b : u.junctures) breaks.push_back(to_string(b));
    return j.dump();
}

Utterance utterance_from_json_line(const std::string& line) {
    const auto j = ordered_json::parse(line);
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.lang = j.at("lang").get<std::string>();
    u.words = j.at("words").get<std::vector<std::string>>();
    for (const auto& b : j.at("breaks")) {
        const auto label = break_label_from_string(b.get<std::string>());
        if (!label) throw std::runtime_error("unknown break label '" + b.get<std::string>() + "'");
        u.junctures.push_back(*label);
    }
    return u;
}

std::vector<Utterance> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<Utterance> corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        Utterance u;
        try {
            u = utterance_from_json_line(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": malformed record: " + e.what());
        }
        const auto report = validate_utterance(u);
        if (!report.ok()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": utterance '" +
                                     u.id + "': " + report.violations.front());
        }
        corpus.push_back(std::move(u));
    }
    return corpus;
}

void save_corpus(const std::vector<Utterance>& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& u : corpus) out << utterance_to_json_line(u) << '\n';
    if (!out) throw std::runtime_error("I/O error while writing " + path);
}

namespace {

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    CounterRng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    }
    return perm;
}

}  // namespace

DatasetSplit split_dataset(const std::vector<Utterance>& corpus, SplitSizes sizes,
                           std::uint64_t seed) {
    if (sizes.total() > corpus.size()) {
        throw std::runtime_error("split sizes (" + std::to_string(sizes.total()) +
                                 ") exceed corpus size (" + std::to_string(corpus.size()) + ")");
    }
    const auto perm = seeded_permutation(corpus.size(), seed);
    DatasetSplit split;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < sizes.train; ++i) split.train.push_back(corpus[perm[pos++]]);
    for (std::size_t i = 0; i < sizes.validation; ++i)
        split.validation.push_back(corpus[perm[pos++]]);
    for (std::size_t i = 0; i < sizes.test; ++i) split.test.push_back(corpus[perm[pos++]]);
    return split;
}

std::vector<Utterance> sample_few_shot(const std::vector<Utterance>& corpus, std::size_t k,
                                       std::uint64_t seed) {
    if (k > corpus.size()) {
        throw std::runtime_error("few-shot k (" + std::to_string(k) + ") exceeds corpus size (" +
                                 std::to_string(corpus.size()) + ")");
    }
    const auto perm = seeded_permutation(corpus.size(), seed);
    std::vector<Utterance> sample;
    sample.reserve(k);
    for (std::size_t i = 0; i < k; ++i) sample.push_back(corpus[perm[i]]);
    return sample;
}

CorpusStats compute_stats(const std::vector<Utterance>& corpus, const WordPieceVocab& vocab,
                          std::size_t reference_count) {
    if (corpus.empty()) throw std::runtime_error("compute_stats: empty corpus");

    CorpusStats stats;
    stats.utterance_count = corpus.size();
    stats.ratio_to_reference =
        reference_count == 0 ? 0.0
                             : static_cast<double>(corpus.size()) / static_cast<double>(reference_count);

    std::vector<double> subwords_per_utt;
    subwords_per_utt.reserve(corpus.size());
    double len_sum = 0.0, len_sq_sum = 0.0;
    std::size_t piece_total = 0;
    std::array<std::size_t, kNumBreakClasses> label_counts{};
    std::size_t juncture_total = 0;

    for (const auto& u : corpus) {
        std::size_t pieces = 0;
        for (const auto& word : u.words) {
            for (int id : encode_word(vocab, word)) {
                ++pieces;
                const std::string& tok = vocab.token(id);
                // Character length without the continuation marker, in codepoints.
                std::size_t off = tok.rfind("##", 0) == 0 ? 2 : 0;
                std::size_t cp = 0;
                for (std::size_t b = off; b < tok.size(); ++b) {
                    if ((static_cast<unsigned char>(tok[b]) & 0xC0) != 0x80) ++cp;
                }
                len_sum += static_cast<double>(cp);
                len_sq_sum += static_cast<double>(cp) * static_cast<double>(cp);
            }
        }
        piece_total += pieces;
        subwords_per_utt.push_back(static_cast<double>(pieces));
        for (BreakLabel b : u.junctures) ++label_counts[static_cast<int>(b)];
        juncture_total += u.junctures.size();
    }

    const double n = static_cast<double>(corpus.size());
    stats.subwords_mean =
        std::accumulate(subwords_per_utt.begin(), subwords_per_utt.end(), 0.0) / n;
    double var = 0.0;
    for (double v : subwords_per_utt) var += (v - stats.subwords_mean) * (v - stats.subwords_mean);
    stats.subwords_sd = std::sqrt(var / n);

    const double m = static_cast<double>(piece_total);
    stats.subword_len_mean = m > 0 ? len_sum / m : 0.0;
    stats.subword_len_sd =
        m > 0 ? std::sqrt(std::max(0.0, len_sq_sum / m - stats.subword_len_mean * stats.subword_len_mean))
              : 0.0;

    for (int c = 0; c < kNumBreakClasses; ++c) {
        stats.label_ratio[c] =
            static_cast<double>(label_counts[c]) / static_cast<double>(juncture_total);
    }
    return stats;
}

void write_stats_csv(std::ostream& out,
                     const std::vector<std::pair<LanguageCode, CorpusStats>>& rows) {
    out << "language,utterances,ratio,subwords_mean,subwords_sd,subword_len_mean,"
           "subword_len_sd,ap_pct,ip_pct,sb_pct\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };
    for (const auto& [lang, s] : rows) {
        out << lang << ',' << s.utterance_count << ',' << fmt(s.ratio_to_reference) << ','
            << fmt(s.subwords_mean) << ',' << fmt(s.subwords_sd) << ',' << fmt(s.subword_len_mean)
            << ',' << fmt(s.subword_len_sd) << ',' << fmt(100.0 * s.label_ratio[0]) << ','
            << fmt(100.0 * s.label_ratio[1]) << ',' << fmt(100.0 * s.label_ratio[2]) << '\n';
    }
}

}  // namespace pbp

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "pbp/corpus.hpp"
#include "pbp/rng.hpp"

// Synthetic language generator. A language is a lexicon of words, each
// carrying a hidden grammatical class that is readable off its two-letter
// suffix, plus a break grammar: at the juncture after word i the label is
// IP when the class pair (word i-1, word i) is an IP trigger and the
// current phrase is long enough, AP otherwise, with bounded label noise
// on top. The trigger set is calibrated against the language's own class
// process so realized label ratios land on the spec targets.

namespace pbp {

namespace {

constexpr std::size_t kNumClasses = 6;
constexpr double kNoiseIpShare = 0.5;  // noisy junctures redraw uniformly over {AP, IP}

struct LexEntry {
    std::string surface;
    std::size_t word_class;
};

struct SynthModel {
    std::vector<LexEntry> lexicon;
    std::vector<std::vector<std::size_t>> class_buckets;  // entry indices per class
    // Row kNumClasses is the sentence-start state.
    std::vector<std::array<double, kNumClasses>> transition;  // (C+1) x C probabilities
    std::vector<std::array<double, kNumClasses>> pair_score;  // (C+1) x C, blended
    std::vector<std::array<bool, kNumClasses>> ip_trigger;    // calibrated flags
    std::array<double, kNumBreakClasses> target_ratio{};
    double mean_phrase_len = 0.0;
    double label_noise = 0.0;
    std::size_t phrase_gate = 1;
    std::array<std::size_t, 2> length_range{};
    double length_p = 0.0;  // binomial parameter for sentence length
};

void check_spec(const SynthLanguageSpec& spec) {
    if (spec.name.empty() || !valid_language_code(spec.name)) {
        throw std::runtime_error("synth spec: invalid language name '" + spec.name + "'");
    }
    if (spec.lexicon_size == 0) throw std::runtime_error("synth spec: lexicon_size must be >= 1");
    if (spec.overlap < 0.0 || spec.overlap > 1.0) {
        throw std::runtime_error("synth spec: overlap outside [0,1]");
    }
    const auto& t = spec.break_grammar.target_ratio;
    const double sum = t[0] + t[1] + t[2];
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::runtime_error("synth spec: target label ratios must sum to 1");
    }
    if (t[0] < 0 || t[1] < 0 || t[2] <= 0) {
        throw std::runtime_error("synth spec: target ratios must be non-negative, SB positive");
    }
    if (spec.length_range[0] < 1 || spec.length_range[1] < spec.length_range[0]) {
        throw std::runtime_error("synth spec: invalid length_range");
    }
    if (spec.break_grammar.label_noise < 0.0 || spec.break_grammar.label_noise >= 1.0) {
        throw std::runtime_error("synth spec: label_noise outside [0,1)");
    }
}

std::string make_syllable(CounterRng& rng, const std::string& consonants) {
    static const std::string vowels = "aeiou";
    std::string s;
    s += consonants[rng.uniform_int(consonants.size())];
    s += vowels[rng.uniform_int(vowels.size())];
    if (rng.uniform() < 0.3) s += consonants[rng.uniform_int(consonants.size())];
    return s;
}

std::string language_consonants(CounterRng& rng) {
    std::string pool = "bcdfghjklmnpqrstvwz";
    for (std::size_t i = pool.size(); i > 1; --i) {
        std::swap(pool[i - 1], pool[rng.uniform_int(i)]);
    }
    return pool.substr(0, 12);
}

std::vector<std::string> make_suffixes(CounterRng& rng, const std::string& consonants,
                                       const std::vector<std::string>& reserved) {
    static const std::string vowels = "aeiou";
    std::unordered_set<std::string> used(reserved.begin(), reserved.end());
    std::vector<std::string> suffixes;
    while (suffixes.size() < kNumClasses) {
        std::string s;
        s += consonants[rng.uniform_int(consonants.size())];
        s += vowels[rng.uniform_int(vowels.size())];
        if (used.insert(s).second) suffixes.push_back(s);
    }
    return suffixes;
}

double simulate_ip_fraction(const SynthModel& model, std::size_t flagged_prefix,
                            const std::vector<std::pair<std::size_t, std::size_t>>& ranked_pairs,
                            std::uint64_t pilot_seed) {
    std::vector<std::array<bool, kNumClasses>> flags(kNumClasses + 1);
    for (auto& row : flags) row.fill(false);
    for (std::size_t i = 0; i < flagged_prefix; ++i) {
        flags[ranked_pairs[i].first][ranked_pairs[i].second] = true;
    }

    CounterRng rng(pilot_seed);
    const std::size_t lo = model.length_range[0], hi = model.length_range[1];
    std::size_t ip = 0, nonfinal = 0;
    for (int s = 0; s < 1500; ++s) {
        std::size_t len = lo;
        for (std::size_t t = lo; t < hi; ++t) {
            if (rng.uniform() < model.length_p) ++len;
        }
        std::size_t prev = kNumClasses;
        std::size_t phrase_len = 0;
        for (std::size_t i = 0; i < len; ++i) {
            const double u = rng.uniform();
            double acc = 0.0;
            std::size_t cls = kNumClasses - 1;
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                acc += model.transition[prev][c];
                if (u < acc) { cls = c; break; }
            }
            ++phrase_len;
            if (i + 1 < len) {
                ++nonfinal;
                if (phrase_len >= model.phrase_gate && flags[prev == kNumClasses ? kNumClasses : prev][cls]) {
                    ++ip;
                    phrase_len = 0;
                }
            }
            prev = cls;
        }
    }
    return nonfinal == 0 ? 0.0 : static_cast<double>(ip) / static_cast<double>(nonfinal);
}

SynthModel build_model(const SynthLanguageSpec& spec, const SynthModel* parent) {
    check_spec(spec);
    const double w = parent ? spec.overlap : 0.0;

    SynthModel model;
    CounterRng root(spec.seed);

    // Break-grammar parameters, blended toward the parent by `overlap`.
    const auto& own = spec.break_grammar;
    for (int c = 0; c < kNumBreakClasses; ++c) {
        model.target_ratio[c] =
            parent ? w * parent->target_ratio[c] + (1 - w) * own.target_ratio[c] : own.target_ratio[c];
    }
    model.mean_phrase_len =
        parent ? w * parent->mean_phrase_len + (1 - w) * own.mean_phrase_len : own.mean_phrase_len;
    model.label_noise = parent ? w * parent->label_noise + (1 - w) * own.label_noise : own.label_noise;
    model.phrase_gate = std::max<std::size_t>(1, static_cast<std::size_t>(model.mean_phrase_len / 2.0));
    model.length_range = spec.length_range;

    // Sentence length: lo + Binomial(hi-lo, p) with mean matched to the SB target.
    const double lo = static_cast<double>(spec.length_range[0]);
    const double hi = static_cast<double>(spec.length_range[1]);
    const double mean_len = std::clamp(1.0 / model.target_ratio[2], lo, hi);
    model.length_p = hi > lo ? (mean_len - lo) / (hi - lo) : 0.0;

    // Class transition matrix and IP pair scores.
    CounterRng grammar_rng = root.derive("grammar");
    model.transition.resize(kNumClasses + 1);
    model.pair_score.resize(kNumClasses + 1);
    for (std::size_t p = 0; p <= kNumClasses; ++p) {
        std::array<double, kNumClasses> logits{};
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            double fresh = grammar_rng.normal() * 0.75;
            logits[c] = parent ? w * std::log(std::max(parent->transition[p][c], 1e-12)) + (1 - w) * fresh
                               : fresh;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) { l = std::exp(l - mx); z += l; }
        for (std::size_t c = 0; c < kNumClasses; ++c) model.transition[p][c] = logits[c] / z;

        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const double fresh = grammar_rng.uniform();
            model.pair_score[p][c] = parent ? w * parent->pair_score[p][c] + (1 - w) * fresh : fresh;
        }
    }

    // Calibrate the IP trigger set so that realized ratios hit the targets.
    // The pilot stream is seeded from the blended grammar content, so two
    // specs with identical grammars calibrate identically.
    std::uint64_t pilot_seed = 0x70696c6f74ull;
    for (std::size_t p = 0; p <= kNumClasses; ++p) {
        pilot_seed = fnv1a64(model.transition[p].data(), sizeof(double) * kNumClasses, pilot_seed);
        pilot_seed = fnv1a64(model.pair_score[p].data(), sizeof(double) * kNumClasses, pilot_seed);
    }

    const double q =
        model.target_ratio[1] / std::max(1e-12, model.target_ratio[0] + model.target_ratio[1]);
    const double q_rule =
        std::clamp((q - kNoiseIpShare * model.label_noise) / (1.0 - model.label_noise), 0.0, 1.0);

    std::vector<std::pair<std::size_t, std::size_t>> ranked;
    for (std::size_t p = 0; p <= kNumClasses; ++p) {
        for (std::size_t c = 0; c < kNumClasses; ++c) ranked.emplace_back(p, c);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        const double sa = model.pair_score[a.first][a.second];
        const double sb = model.pair_score[b.first][b.second];
        if (sa != sb) return sa > sb;
        return a < b;
    });

    std::size_t best_prefix = 0;
    double best_err = 1.0;
    std::size_t lo_n = 0, hi_n = ranked.size();
    while (lo_n < hi_n) {  // realized IP fraction is monotone in the prefix length
        const std::size_t mid = (lo_n + hi_n) / 2;
        const double f = simulate_ip_fraction(model, mid, ranked, pilot_seed);
        if (std::abs(f - q_rule) < best_err) { best_err = std::abs(f - q_rule); best_prefix = mid; }
        if (f < q_rule) lo_n = mid + 1; else hi_n = mid;
    }
    for (std::size_t cand : {lo_n, lo_n + 1}) {
        if (cand > ranked.size()) continue;
        const double f = simulate_ip_fraction(model, cand, ranked, pilot_seed);
        if (std::abs(f - q_rule) < best_err) { best_err = std::abs(f - q_rule); best_prefix = cand; }
    }

    model.ip_trigger.resize(kNumClasses + 1);
    for (auto& row : model.ip_trigger) row.fill(false);
    for (std::size_t i = 0; i < best_prefix; ++i) {
        model.ip_trigger[ranked[i].first][ranked[i].second] = true;
    }

    // Lexicon: class suffixes first, then stems. A child shares the leading
    // `overlap` fraction of the parent's entries and class suffixes.
    CounterRng lex_rng = root.derive("lexicon");
    const std::string consonants = language_consonants(lex_rng);

    std::vector<std::string> suffixes(kNumClasses);
    const std::size_t shared_classes =
        parent ? static_cast<std::size_t>(std::ceil(w * kNumClasses)) : 0;
    std::vector<std::string> parent_suffixes;
    if (parent) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            // Recover the parent's suffix from any of its entries of class c.
            const auto& bucket = parent->class_buckets[c];
            parent_suffixes.push_back(
                bucket.empty() ? "" : parent->lexicon[bucket[0]].surface.substr(
                                          parent->lexicon[bucket[0]].surface.size() - 2));
        }
    }
    const auto fresh_suffixes = make_suffixes(lex_rng, consonants, parent_suffixes);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        suffixes[c] = (c < shared_classes && parent) ? parent_suffixes[c] : fresh_suffixes[c];
    }

    std::unordered_set<std::string> seen;
    const std::size_t shared_words = parent
        ? std::min(parent->lexicon.size(),
                   static_cast<std::size_t>(std::ceil(w * static_cast<double>(spec.lexicon_size))))
        : 0;
    for (std::size_t i = 0; i < shared_words; ++i) {
        model.lexicon.push_back(parent->lexicon[i]);
        seen.insert(parent->lexicon[i].surface);
    }
    while (model.lexicon.size() < spec.lexicon_size) {
        const std::size_t cls = lex_rng.uniform_int(kNumClasses);
        std::string stem = make_syllable(lex_rng, consonants);
        if (lex_rng.uniform() < 0.6) stem += make_syllable(lex_rng, consonants);
        if (lex_rng.uniform() < 0.25) stem += make_syllable(lex_rng, consonants);
        std::string surface = stem + suffixes[cls];
        if (!seen.insert(surface).second) continue;
        model.lexicon.push_back({std::move(surface), cls});
    }

    model.class_buckets.resize(kNumClasses);
    for (std::size_t i = 0; i < model.lexicon.size(); ++i) {
        model.class_buckets[model.lexicon[i].word_class].push_back(i);
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (model.class_buckets[c].empty()) {
            // Tiny lexicons may miss a class; give it one dedicated entry.
            std::string surface = make_syllable(lex_rng, consonants) + suffixes[c];
            while (!seen.insert(surface).second) {
                surface = make_syllable(lex_rng, consonants) + suffixes[c];
            }
            model.lexicon.push_back({surface, c});
            model.class_buckets[c].push_back(model.lexicon.size() - 1);
        }
    }
    return model;
}

}  // namespace

std::vector<Utterance> generate_synthetic_language(const SynthLanguageSpec& spec, std::size_t n,
                                                   const SynthLanguageSpec* parent_spec) {
    if (n < 1) throw std::runtime_error("generate_synthetic_language: n must be >= 1");
    if (spec.parent && !parent_spec) {
        throw std::runtime_error("synth spec '" + spec.name + "' names parent '" + *spec.parent +
                                 "' but no parent spec was provided");
    }
    if (spec.parent && parent_spec && parent_spec->name != *spec.parent) {
        throw std::runtime_error("parent spec mismatch: expected '" + *spec.parent + "', got '" +
                                 parent_spec->name + "'");
    }

    SynthModel parent_model;
    const SynthModel* parent_ptr = nullptr;
    if (spec.parent) {
        if (parent_spec->parent) {
            throw std::runtime_error("synth languages support one level of parentage");
        }
        parent_model = build_model(*parent_spec, nullptr);
        parent_ptr = &parent_model;
    }
    const SynthModel model = build_model(spec, parent_ptr);

    CounterRng rng = CounterRng(spec.seed).derive("utterances");
    const std::size_t lo = model.length_range[0], hi = model.length_range[1];

    std::vector<Utterance> corpus;
    corpus.reserve(n);
    char idbuf[32];
    for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t len = lo;
        for (std::size_t t = lo; t < hi; ++t) {
            if (rng.uniform() < model.length_p) ++len;
        }

        Utterance u;
        std::snprintf(idbuf, sizeof(idbuf), "%s-%06zu", spec.name.c_str(), idx);
        u.id = idbuf;
        u.lang = spec.name;
        u.words.reserve(len);
        u.junctures.reserve(len);

        std::size_t prev = kNumClasses;
        std::size_t phrase_len = 0;
        for (std::size_t i = 0; i < len; ++i) {
            const double udraw = rng.uniform();
            double acc = 0.0;
            std::size_t cls = kNumClasses - 1;
            for (std::size_t c = 0; c < kNumClasses; ++c) {
                acc += model.transition[prev][c];
                if (udraw < acc) { cls = c; break; }
            }
            const auto& bucket = model.class_buckets[cls];
            u.words.push_back(model.lexicon[bucket[rng.uniform_int(bucket.size())]].surface);

            ++phrase_len;
            if (i + 1 == len) {
                u.junctures.push_back(BreakLabel::SB);
            } else {
                BreakLabel label =
                    (phrase_len >= model.phrase_gate && model.ip_trigger[prev][cls])
                        ? BreakLabel::IP
                        : BreakLabel::AP;
                if (rng.uniform() < model.label_noise) {
                    label = rng.uniform() < kNoiseIpShare ? BreakLabel::IP : BreakLabel::AP;
                }
                if (label == BreakLabel::IP) phrase_len = 0;
                u.junctures.push_back(label);
            }
            prev = cls;
        }
        corpus.push_back(std::move(u));
    }
    return corpus;
}

std::vector<Utterance> generate_synthetic_language(const SynthLanguageSpec& spec, std::size_t n) {
    return generate_synthetic_language(spec, n, nullptr);
}

}  // namespace pbp

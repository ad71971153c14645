#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "pbp/corpus.hpp"
#include "pbp/rng.hpp"
#include "pbp/tokenizer.hpp"

using namespace pbp;
using pbp::testing::make_utterance;

namespace {

// A corpus whose word multiset is {"ab" x10, "abc" x5}.
std::vector<Utterance> merge_fixture() {
    std::vector<Utterance> corpus;
    for (int i = 0; i < 5; ++i) {
        corpus.push_back(make_utterance(
            "m" + std::to_string(i), "en", {"ab", "ab", "abc"},
            {BreakLabel::AP, BreakLabel::AP, BreakLabel::SB}));
    }
    return corpus;
}

WordPieceVocab hand_vocab(std::vector<std::string> extra) {
    std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    tokens.insert(tokens.end(), extra.begin(), extra.end());
    return WordPieceVocab(std::move(tokens));
}

std::vector<std::string> pieces_of(const WordPieceVocab& vocab, const std::string& word) {
    std::vector<std::string> out;
    for (int id : encode_word(vocab, word)) out.push_back(vocab.token(id));
    return out;
}

}  // namespace

TEST_CASE("train_vocab: hand-run merge loop on the count table") {
    // Pairs: (a,##b) count 15, (##b,##c) count 5. Budget 9 = 5 specials +
    // 3 characters + 1 merge, so only (a,##b) -> "ab" happens.
    const auto vocab = train_vocab(merge_fixture(), 9, 1, 0);
    for (const char* tok : {"a", "b", "c", "##b", "##c", "ab"}) {
        CAPTURE(tok);
        CHECK(vocab.id_of(tok) >= 0);
    }
    CHECK(vocab.id_of("abc") < 0);   // would need a second merge
    CHECK(vocab.id_of("##bc") < 0);

    // One more unit of budget admits the (ab,##c) merge.
    const auto bigger = train_vocab(merge_fixture(), 10, 1, 0);
    CHECK(bigger.id_of("abc") >= 0);
}

TEST_CASE("train_vocab: determinism, alphabet error, min_frequency stop") {
    const auto a = train_vocab(merge_fixture(), 12, 1, 0);
    const auto b = train_vocab(merge_fixture(), 12, 1, 0);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.token(int(i)) == b.token(int(i)));

    CHECK_THROWS(train_vocab(merge_fixture(), 7, 1, 0));  // 5 specials + 3 chars do not fit

    // min_frequency 20 blocks every merge (best pair count is 15).
    const auto no_merges = train_vocab(merge_fixture(), 50, 20, 0);
    CHECK(no_merges.id_of("ab") < 0);
    CHECK(no_merges.size() == 5 + 6);  // specials + both forms of a,b,c
}

TEST_CASE("encode_word: greedy longest match") {
    const auto vocab = hand_vocab({"un", "##able", "u", "##n", "##a", "##b", "##l", "##e",
                                   "unable"});
    // "unable" is itself a token: one id wins over any split.
    CHECK(pieces_of(vocab, "unable") == std::vector<std::string>{"unable"});

    const auto vocab2 = hand_vocab({"un", "##able", "u", "##n", "##a", "##b", "##l", "##e"});
    CHECK(pieces_of(vocab2, "unable") == std::vector<std::string>{"un", "##able"});

    // A character with no vocabulary entry collapses the word to [UNK].
    CHECK(encode_word(vocab2, "unZable") == std::vector<int>{WordPieceVocab::kUnkId});

    CHECK_THROWS(encode_word(vocab2, ""));
}

TEST_CASE("encode_word: greedy property verified exhaustively on a small vocabulary") {
    // 30 tokens; for every prefix position the taken match must be the
    // longest vocabulary hit.
    std::vector<std::string> extra;
    for (const char* t : {"a",    "b",    "c",    "ab",   "abc",  "ba",   "##a",  "##b",
                          "##c",  "##ab", "##bc", "##abc", "##ba", "##ca", "ca",   "cab",
                          "##cab", "bc",  "ac",   "##ac", "aa",   "##aa", "bb",   "##bb",
                          "cc"}) {
        extra.push_back(t);
    }
    const auto vocab = hand_vocab(extra);

    CounterRng rng(5);
    const std::string alphabet = "abc";
    for (int trial = 0; trial < 500; ++trial) {
        std::string word;
        const std::size_t len = 1 + rng.uniform_int(8);
        for (std::size_t i = 0; i < len; ++i) word += alphabet[rng.uniform_int(3)];

        const auto ids = encode_word(vocab, word);
        REQUIRE(!ids.empty());
        if (ids.size() == 1 && ids[0] == WordPieceVocab::kUnkId) continue;

        std::size_t pos = 0;
        for (int id : ids) {
            std::string tok = vocab.token(id);
            const bool cont = tok.rfind("##", 0) == 0;
            CHECK(cont == (pos > 0));
            if (cont) tok = tok.substr(2);
            CHECK(word.compare(pos, tok.size(), tok) == 0);
            // No longer match exists at this position.
            for (std::size_t longer = tok.size() + 1; pos + longer <= word.size(); ++longer) {
                std::string cand = word.substr(pos, longer);
                if (pos > 0) cand = "##" + cand;
                CHECK(vocab.id_of(cand) < 0);
            }
            pos += tok.size();
        }
        CHECK(pos == word.size());
    }
}

TEST_CASE("roundtrip: stripping continuation markers reproduces UNK-free words") {
    SynthLanguageSpec spec;
    spec.name = "syn";
    spec.lexicon_size = 600;
    spec.seed = 77;
    const auto corpus = generate_synthetic_language(spec, 400);
    const auto vocab = train_vocab(corpus, 900, 2, 0);

    std::size_t words_checked = 0;
    for (const auto& u : corpus) {
        for (const auto& word : u.words) {
            const auto ids = encode_word(vocab, word);
            if (ids.size() == 1 && ids[0] == WordPieceVocab::kUnkId) continue;
            std::string rebuilt;
            for (int id : ids) {
                const std::string& tok = vocab.token(id);
                rebuilt += tok.rfind("##", 0) == 0 ? tok.substr(2) : tok;
            }
            CHECK(rebuilt == word);
            ++words_checked;
        }
    }
    CHECK(words_checked >= 4000);
}

TEST_CASE("encode_utterance: layout, label slots, truncation") {
    const auto vocab = hand_vocab({"w", "##0", "##1", "un", "##able", "x"});
    const auto u2 = make_utterance("a", "en", {"w0", "w1"}, {BreakLabel::AP, BreakLabel::SB});
    const auto enc = encode_utterance(vocab, u2);
    CHECK(enc.ids.size() == 6);  // CLS w ##0 w ##1 SEP
    CHECK(enc.ids.front() == WordPieceVocab::kClsId);
    CHECK(enc.ids.back() == WordPieceVocab::kSepId);
    CHECK(enc.label_slots == std::vector<int>{2, 4});
    CHECK(enc.word_index == std::vector<int>{-1, 0, 0, 1, 1, -1});
    CHECK_FALSE(enc.truncated);

    // One-piece words: ids length 4, slots at 1 and 2.
    const auto vocab2 = hand_vocab({"w0", "w1"});
    const auto enc2 = encode_utterance(vocab2, u2);
    CHECK(enc2.ids.size() == 4);
    CHECK(enc2.label_slots == std::vector<int>{1, 2});

    // unable (2 pieces) + x (1 piece): slots on ##able and x.
    const auto u3 = make_utterance("b", "en", {"unable", "x"}, {BreakLabel::IP, BreakLabel::SB});
    const auto enc3 = encode_utterance(vocab, u3);
    CHECK(enc3.ids.size() == 5);
    CHECK(enc3.label_slots == std::vector<int>{2, 3});
    CHECK(vocab.token(enc3.ids[2]) == "##able");
    CHECK(vocab.token(enc3.ids[3]) == "x");

    // 130 one-piece words exceed the 126-piece budget: truncated, length 128.
    std::vector<std::string> many_words(130, "w0");
    std::vector<BreakLabel> many_breaks(130, BreakLabel::AP);
    many_breaks.back() = BreakLabel::SB;
    const auto big = make_utterance("c", "en", std::move(many_words), std::move(many_breaks));
    const auto enc4 = encode_utterance(hand_vocab({"w0"}), big);
    CHECK(enc4.truncated);
    CHECK(enc4.ids.size() == 128);
    CHECK(enc4.label_slots.size() == 126);
}

TEST_CASE("encode_utterance: length never exceeds max_len, slots match survivors") {
    SynthLanguageSpec spec;
    spec.name = "syn";
    spec.lexicon_size = 300;
    spec.seed = 13;
    const auto corpus = generate_synthetic_language(spec, 200);
    const auto vocab = train_vocab(corpus, 340, 2, 0);

    CounterRng rng(1);
    for (const auto& u : corpus) {
        const std::size_t max_len = 8 + rng.uniform_int(120);
        const auto enc = encode_utterance(vocab, u, max_len);
        CHECK(enc.ids.size() <= max_len);
        std::size_t survivors = 0;
        for (int w : enc.word_index) {
            if (w >= 0) survivors = std::max(survivors, static_cast<std::size_t>(w) + 1);
        }
        CHECK(enc.label_slots.size() == survivors);
        if (!enc.truncated) CHECK(survivors == u.words.size());
        for (int slot : enc.label_slots) {
            CHECK(slot > 0);
            CHECK(static_cast<std::size_t>(slot) < enc.ids.size());
        }
    }
}

TEST_CASE("align_labels: placement, truncation, length checks") {
    const auto vocab = hand_vocab({"w0", "w1", "un", "##able", "x"});
    const auto u = make_utterance("a", "en", {"w0", "w1"}, {BreakLabel::AP, BreakLabel::SB});
    const auto enc = encode_utterance(vocab, u);
    const auto targets = align_labels(enc, u.junctures);
    CHECK(targets == std::vector<int>{kIgnoreTarget, 0, 2, kIgnoreTarget});

    const auto u2 = make_utterance("b", "en", {"unable", "x"}, {BreakLabel::IP, BreakLabel::SB});
    const auto enc2 = encode_utterance(vocab, u2);
    const auto targets2 = align_labels(enc2, u2.junctures);
    CHECK(targets2 == std::vector<int>{kIgnoreTarget, kIgnoreTarget, 1, 2, kIgnoreTarget});

    CHECK_THROWS(align_labels(enc, {BreakLabel::SB}));

    // Truncated words contribute no targets.
    std::vector<std::string> words(10, "w0");
    std::vector<BreakLabel> breaks(10, BreakLabel::AP);
    breaks.back() = BreakLabel::SB;
    const auto u3 = make_utterance("c", "en", std::move(words), std::move(breaks));
    const auto enc3 = encode_utterance(vocab, u3, 6);  // room for 4 words
    CHECK(enc3.truncated);
    const auto targets3 = align_labels(enc3, u3.junctures);
    CHECK(targets3.size() == enc3.ids.size());
    std::size_t labeled = 0;
    for (int t : targets3) labeled += t != kIgnoreTarget;
    CHECK(labeled == enc3.label_slots.size());
}

TEST_CASE("vocabulary file round-trip and validation") {
    const auto vocab = train_vocab(merge_fixture(), 12, 1, 0);
    const std::string path =
        (std::filesystem::temp_directory_path() / "pbp_vocab_rt.txt").string();
    vocab.save(path);
    const auto loaded = WordPieceVocab::load(path);
    REQUIRE(loaded.size() == vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) CHECK(loaded.token(int(i)) == vocab.token(int(i)));

    CHECK_THROWS(WordPieceVocab({"[PAD]", "[UNK]"}));                       // specials missing
    CHECK_THROWS(WordPieceVocab({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "x"}));  // wrong special
    CHECK_THROWS(WordPieceVocab(
        {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "a"}));  // duplicate token
}

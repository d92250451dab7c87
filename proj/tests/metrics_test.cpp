#include <gtest/gtest.h>

#include <random>

#include "dkmd/metrics.hpp"
#include "oracles.hpp"

using namespace dkmd;

namespace {

TokenSeq words(std::initializer_list<const char*> toks) {
    TokenSeq out;
    for (const char* t : toks) out.emplace_back(t);
    return out;
}

}  // namespace

TEST(NgramCounts, BasicMultisets) {
    const TokenSeq aba = words({"a", "b", "a"});
    auto uni = ngram_counts(aba, 1);
    EXPECT_EQ(uni[{std::vector<std::string>{"a"}}], 2u);
    EXPECT_EQ(uni[{std::vector<std::string>{"b"}}], 1u);
    auto bi = ngram_counts(aba, 2);
    EXPECT_EQ(bi.size(), 2u);
    EXPECT_TRUE(ngram_counts(aba, 4).empty());
    EXPECT_THROW(ngram_counts(aba, 0), Error);
}

TEST(NgramCounts, MatchesSlidingWindowOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto tokens = oracle::random_tokens(rng, 15, 5);
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto got = ngram_counts(tokens, n);
            const auto expected = oracle::ngrams_joined(tokens, n);
            std::size_t got_total = 0;
            for (const auto& [gram, count] : got) {
                std::string key;
                for (const auto& t : gram) key += t + '\x1f';
                ASSERT_TRUE(expected.count(key));
                EXPECT_EQ(expected.at(key), count);
                got_total += count;
            }
            std::size_t expected_total = 0;
            for (const auto& [k, c] : expected) expected_total += c;
            EXPECT_EQ(got_total, expected_total);
        }
    }
}

TEST(Bleu, IdenticalCorpusScoresOne) {
    std::vector<TokenSeq> refs = {words({"the", "cat", "sat"}), words({"a", "dog", "ran", "far"})};
    for (std::size_t n = 1; n <= 4; ++n) {
        // BLEU-4 on 3-token sentences has no 4-grams; restrict to valid n.
        if (n <= 3) EXPECT_DOUBLE_EQ(bleu(refs, refs, n), 1.0) << n;
    }
    std::vector<TokenSeq> longer = {words({"w1", "w2", "w3", "w4", "w5"})};
    EXPECT_DOUBLE_EQ(bleu(longer, longer, 4), 1.0);
}

TEST(Bleu, ClippedPrecisionHandCase) {
    // Candidate of seven "the" against a six-token reference containing
    // "the" twice: clipped unigram precision 2/7, brevity penalty 1.
    std::vector<TokenSeq> cand = {words({"the", "the", "the", "the", "the", "the", "the"})};
    std::vector<TokenSeq> ref = {words({"the", "cat", "is", "on", "the", "mat"})};
    EXPECT_NEAR(bleu(cand, ref, 1), 2.0 / 7.0, 1e-9);
}

TEST(Bleu, ZeroOverlapAndEmptyCandidates) {
    std::vector<TokenSeq> cand = {words({"x", "y"})};
    std::vector<TokenSeq> ref = {words({"a", "b"})};
    EXPECT_DOUBLE_EQ(bleu(cand, ref, 1), 0.0);
    std::vector<TokenSeq> empty_cand = {TokenSeq{}};
    EXPECT_DOUBLE_EQ(bleu(empty_cand, ref, 1), 0.0);
    EXPECT_THROW(bleu({}, {}, 1), Error);
    EXPECT_THROW(bleu(cand, {}, 1), Error);
}

TEST(Bleu, NonIncreasingInNWithoutHigherOrderOverlap) {
    // Unigram overlap only: shuffled word order kills higher n-grams.
    std::vector<TokenSeq> cand = {words({"d", "c", "b", "a"})};
    std::vector<TokenSeq> ref = {words({"a", "b", "c", "d"})};
    double prev = 1.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        const double score = bleu(cand, ref, n);
        EXPECT_LE(score, prev);
        prev = score;
    }
    EXPECT_GT(bleu(cand, ref, 1), 0.0);
    EXPECT_DOUBLE_EQ(bleu(cand, ref, 2), 0.0);
}

TEST(Bleu, BrevityPenaltyBounds) {
    // Short candidate: BP = exp(1 - r/c) < 1.
    std::vector<TokenSeq> cand = {words({"a", "b"})};
    std::vector<TokenSeq> ref = {words({"a", "b", "c", "d"})};
    const double p1 = 2.0 / 2.0;
    const double bp = std::exp(1.0 - 4.0 / 2.0);
    EXPECT_NEAR(bleu(cand, ref, 1), p1 * bp, 1e-12);
    // Long candidate: BP = 1 (never a bonus).
    std::vector<TokenSeq> longcand = {words({"a", "b", "c", "d", "x", "y"})};
    EXPECT_NEAR(bleu(longcand, ref, 1), 4.0 / 6.0, 1e-12);
}

TEST(Bleu, SmoothingOnlyChangesZeroPrecisions) {
    std::vector<TokenSeq> cand = {words({"a", "x"})};
    std::vector<TokenSeq> ref = {words({"a", "b"})};
    EXPECT_DOUBLE_EQ(bleu(cand, ref, 2), 0.0);
    EXPECT_GT(bleu(cand, ref, 2, /*smooth=*/true), 0.0);
}

TEST(Nist, ZeroOverlapScoresZero) {
    std::vector<TokenSeq> cand = {words({"x", "y"})};
    std::vector<TokenSeq> ref = {words({"a", "b"})};
    EXPECT_DOUBLE_EQ(nist(cand, ref), 0.0);
    std::vector<TokenSeq> empty_cand = {TokenSeq{}};
    EXPECT_DOUBLE_EQ(nist(empty_cand, ref), 0.0);
}

TEST(Nist, SinglePairHandCase) {
    // Reference "a b a", candidate "a b".
    // Unigram infos over the reference corpus: info(a) = log2(3/2),
    // info(b) = log2(3/1). Bigram info(a b) = log2(count(a)/count(a b)) =
    // log2(2/1) = 1. Matched weights: unigrams (log2(1.5)+log2(3))/2,
    // bigrams 1/1. Brevity factor at c/r = 2/3 is 0.5 by construction.
    std::vector<TokenSeq> cand = {words({"a", "b"})};
    std::vector<TokenSeq> ref = {words({"a", "b", "a"})};
    const double unigram_term = (std::log2(1.5) + std::log2(3.0)) / 2.0;
    const double bigram_term = 1.0;
    const double expected = (unigram_term + bigram_term) * 0.5;
    EXPECT_NEAR(nist(cand, ref, 5), expected, 1e-6);
    EXPECT_NEAR(expected, 1.04248125, 1e-7);
}

TEST(Nist, IdentityIsPositiveAndBrevityFactorOne) {
    std::vector<TokenSeq> refs = {words({"find", "a", "quiet", "cafe"}),
                                  words({"the", "mall", "is", "open"})};
    const double score = nist(refs, refs);
    EXPECT_GT(score, 0.0);
    EXPECT_NEAR(score, oracle::nist_score(refs, refs), 1e-12);
}

TEST(Nist, MatchesBruteForceOracleOnRandomCorpora) {
    std::mt19937_64 rng(7);
    for (int corpus = 0; corpus < 20; ++corpus) {
        std::uniform_int_distribution<std::size_t> n_pairs(1, 6);
        std::vector<TokenSeq> cands, refs;
        const std::size_t n = n_pairs(rng);
        for (std::size_t i = 0; i < n; ++i) {
            refs.push_back(oracle::random_tokens(rng, 12, 4));
            // Mix: sometimes mutate the reference, sometimes fresh tokens.
            if (rng() % 2 == 0) {
                TokenSeq c = refs.back();
                if (!c.empty() && rng() % 2 == 0) c[rng() % c.size()] = "w0";
                cands.push_back(c);
            } else {
                cands.push_back(oracle::random_tokens(rng, 10, 4));
            }
        }
        EXPECT_NEAR(nist(cands, refs, 5), oracle::nist_score(cands, refs, 5), 1e-6);
    }
}

TEST(ScoreGenerations, IdentityCorpusAllOnes) {
    std::vector<TokenSeq> refs = {words({"hello", "there", "you", "are", "kind"})};
    EvalReport report = score_generations({"e0"}, refs, refs);
    for (double b : report.bleu) EXPECT_DOUBLE_EQ(b, 1.0);
    EXPECT_GT(report.nist, 0.0);
    EXPECT_EQ(report.n_examples, 1u);
}

TEST(ScoreGenerations, EmptyGenerationsScoreZero) {
    std::vector<TokenSeq> cands = {TokenSeq{}, TokenSeq{}};
    std::vector<TokenSeq> refs = {words({"a", "b"}), words({"c"})};
    EvalReport report = score_generations({"e0", "e1"}, cands, refs);
    for (double b : report.bleu) EXPECT_DOUBLE_EQ(b, 0.0);
    EXPECT_DOUBLE_EQ(report.nist, 0.0);
}

TEST(Evaluate, ReportFieldsCompleteOnFiveExamples) {
    // Five-example corpus; an untrained model still yields a full report.
    Dialog d;
    d.id = "d";
    for (int i = 0; i < 5; ++i) {
        d.turns.push_back(Turn{Speaker::user, "question number w" + std::to_string(i), {}});
        d.turns.push_back(Turn{Speaker::agent, "answer number w" + std::to_string(i), {}});
    }
    std::vector<Dialog> dialogs = {d};
    KnowledgeBase kb;
    ImageFeatureStore store(4);
    Vocabulary vocab = build_vocabulary(dialogs, kb, 1);
    std::vector<TrainItem> items;
    for (auto& ex : extract_examples(d, vocab))
        items.push_back(TrainItem{ex, assemble_selected(ex, kb, store, vocab, 1)});
    ASSERT_EQ(items.size(), 5u);
    ModelConfig c;
    c.dim = 8;
    c.layers = 1;
    c.heads = 2;
    c.ffn_dim = 16;
    c.max_positions = 32;
    c.vocab_size = vocab.size();
    c.image_dim = 4;
    c.fusion_layer = 1;
    Model model = build_model(c, 5);
    EvalReport report = evaluate(model, items, store, vocab, 8);
    EXPECT_EQ(report.n_examples, 5u);
    EXPECT_EQ(report.examples.size(), 5u);
    for (const auto& st : report.examples) {
        EXPECT_FALSE(st.id.empty());
        EXPECT_EQ(st.reference_len, 3u);
    }
    for (double b : report.bleu) {
        EXPECT_GE(b, 0.0);
        EXPECT_LE(b, 1.0);
    }
    EXPECT_GE(report.nist, 0.0);
}

TEST(SurfaceTokens, StripsStructuralSpecials) {
    Vocabulary vocab;
    vocab.add_token("word");
    const std::vector<int> ids = {Vocabulary::kBos, 6, Vocabulary::kEos, Vocabulary::kPad};
    EXPECT_EQ(surface_tokens(ids, vocab), TokenSeq{"word"});
}

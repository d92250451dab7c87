#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dkmd/model.hpp"
#include "dkmd/trainer.hpp"

namespace dkmd {

using TokenSeq = std::vector<std::string>;
using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

// Multiset of contiguous n-grams; max(0, len - n + 1) entries.
inline NgramCounts ngram_counts(const TokenSeq& tokens, std::size_t n) {
    if (n < 1) throw Error(ErrorCategory::config, "ngram_counts: n must be >= 1");
    NgramCounts counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

// Corpus-level BLEU-N with clipped modified precision, geometric mean, and
// brevity penalty min(1, exp(1 - r/c)). Single reference per candidate. A
// zero n-gram precision zeroes the score unless +1 smoothing is requested
// (diagnostics only).
inline double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
                   std::size_t max_n, bool smooth = false) {
    if (candidates.empty()) throw Error(ErrorCategory::invariant, "bleu: empty candidate list");
    if (candidates.size() != references.size())
        throw Error(ErrorCategory::invariant, "bleu: candidate/reference count mismatch");
    if (max_n < 1) throw Error(ErrorCategory::config, "bleu: N must be >= 1");
    std::size_t cand_total = 0, ref_total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_total += candidates[i].size();
        ref_total += references[i].size();
    }
    if (cand_total == 0) return 0.0;

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        std::size_t matched = 0, total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const NgramCounts cand = ngram_counts(candidates[i], n);
            const NgramCounts ref = ngram_counts(references[i], n);
            for (const auto& [gram, count] : cand) {
                auto it = ref.find(gram);
                matched += std::min(count, it == ref.end() ? 0 : it->second);
                total += count;
            }
        }
        double p;
        if (smooth) {
            p = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
        } else {
            if (matched == 0 || total == 0) return 0.0;
            p = static_cast<double>(matched) / static_cast<double>(total);
        }
        log_sum += std::log(p) / static_cast<double>(max_n);
    }
    const double bp = cand_total >= ref_total
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_total) / static_cast<double>(cand_total));
    return bp * std::exp(log_sum);
}

// NIST score: information-weighted n-gram matches. info(w1..wn) =
// log2(count(w1..wn-1) / count(w1..wn)) over the reference corpus, with the
// unigram denominator being the total reference token count. The brevity
// factor exp(beta * ln^2(min(c/r, 1))) uses beta chosen so the factor is 1/2
// at c/r = 2/3.
inline double nist(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
                   std::size_t max_n = 5) {
    if (candidates.empty()) throw Error(ErrorCategory::invariant, "nist: empty candidate list");
    if (candidates.size() != references.size())
        throw Error(ErrorCategory::invariant, "nist: candidate/reference count mismatch");

    std::vector<NgramCounts> ref_corpus(max_n + 1);
    std::size_t ref_total_unigrams = 0;
    for (const auto& ref : references) {
        ref_total_unigrams += ref.size();
        for (std::size_t n = 1; n <= max_n; ++n)
            for (const auto& [gram, count] : ngram_counts(ref, n)) ref_corpus[n][gram] += count;
    }
    if (ref_total_unigrams == 0) return 0.0;

    auto info = [&](const std::vector<std::string>& gram) {
        const std::size_t n = gram.size();
        const std::size_t denom = ref_corpus[n].at(gram);
        std::size_t numer;
        if (n == 1) {
            numer = ref_total_unigrams;
        } else {
            numer = ref_corpus[n - 1].at(std::vector<std::string>(gram.begin(), gram.end() - 1));
        }
        return std::log2(static_cast<double>(numer) / static_cast<double>(denom));
    };

    std::size_t cand_total = 0, ref_total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_total += candidates[i].size();
        ref_total += references[i].size();
    }
    if (cand_total == 0) return 0.0;

    double score_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        double matched_info = 0.0;
        std::size_t total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const NgramCounts cand = ngram_counts(candidates[i], n);
            const NgramCounts ref = ngram_counts(references[i], n);
            for (const auto& [gram, count] : cand) {
                total += count;
                auto it = ref.find(gram);
                if (it == ref.end()) continue;
                matched_info += static_cast<double>(std::min(count, it->second)) * info(gram);
            }
        }
        if (total > 0) score_sum += matched_info / static_cast<double>(total);
    }
    const double beta = std::log(0.5) / std::pow(std::log(2.0 / 3.0), 2);
    const double ratio = std::min(1.0, static_cast<double>(cand_total) / static_cast<double>(ref_total));
    const double bp = std::exp(beta * std::pow(std::log(ratio), 2));
    return score_sum * bp;
}

struct ExampleNgramStats {
    std::string id;
    std::size_t candidate_len = 0;
    std::size_t reference_len = 0;
    std::array<std::size_t, 4> matched{};  // clipped matches per n
    std::array<std::size_t, 4> total{};    // candidate n-grams per n
};

struct EvalReport {
    std::array<double, 4> bleu{};  // BLEU-1..4
    double nist = 0.0;
    std::size_t n_examples = 0;
    std::vector<ExampleNgramStats> examples;
};

inline EvalReport score_generations(const std::vector<std::string>& ids,
                                    const std::vector<TokenSeq>& candidates,
                                    const std::vector<TokenSeq>& references, bool smooth = false) {
    EvalReport report;
    report.n_examples = candidates.size();
    for (std::size_t n = 1; n <= 4; ++n) report.bleu[n - 1] = bleu(candidates, references, n, smooth);
    report.nist = nist(candidates, references, 5);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        ExampleNgramStats st;
        st.id = i < ids.size() ? ids[i] : std::to_string(i);
        st.candidate_len = candidates[i].size();
        st.reference_len = references[i].size();
        for (std::size_t n = 1; n <= 4; ++n) {
            const NgramCounts cand = ngram_counts(candidates[i], n);
            const NgramCounts ref = ngram_counts(references[i], n);
            for (const auto& [gram, count] : cand) {
                st.total[n - 1] += count;
                auto it = ref.find(gram);
                if (it != ref.end()) st.matched[n - 1] += std::min(count, it->second);
            }
        }
        report.examples.push_back(std::move(st));
    }
    return report;
}

// Strips structural specials so scoring sees surface tokens only.
inline TokenSeq surface_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
    TokenSeq out;
    for (int id : ids) {
        if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad) continue;
        out.push_back(vocab.token_of(id));
    }
    return out;
}

// Greedy-generates a response for every item and scores the corpus.
inline EvalReport evaluate(Model& model, const std::vector<TrainItem>& items,
                           const ImageFeatureStore& store, const Vocabulary& vocab,
                           std::size_t max_len, bool smooth = false) {
    std::vector<std::string> ids;
    std::vector<TokenSeq> candidates, references;
    for (const auto& item : items) {
        auto gen = generate_example(model, item.example, item.selection, store, vocab, max_len);
        ids.push_back(item.example.id);
        candidates.push_back(surface_tokens(gen.token_ids, vocab));
        references.push_back(surface_tokens(item.example.response_token_ids, vocab));
    }
    return score_generations(ids, candidates, references, smooth);
}

}  // namespace dkmd

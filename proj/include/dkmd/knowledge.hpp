#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dkmd/corpus.hpp"
#include "dkmd/error.hpp"

namespace dkmd {

struct TextMatch {
    std::string entity_name;
    std::vector<std::string> linearization;
    std::size_t first_position = 0;  // first match offset in the context
};

struct VisionMatch {
    std::string entity_name;
    double score = 0.0;
    std::vector<std::string> linearization;
};

// Selected knowledge for one example: entity-matched attribute sequences
// from the textual context, per-image top-k retrieved sequences from the
// visual context, and the deduplicated union encoded for the decoder.
struct SelectedKnowledge {
    std::vector<TextMatch> text_knowledge;
    std::vector<std::vector<VisionMatch>> vision_knowledge;  // one list per context image
    std::vector<int> decoder_knowledge_ids;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw Error(ErrorCategory::shape, "cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0)
        throw Error(ErrorCategory::numeric, "cosine: zero-norm input");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

// First offset at which `needle` occurs as a contiguous subsequence of
// `haystack`, or npos.
inline std::size_t find_subsequence(const std::vector<int>& haystack, const std::vector<int>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return std::string::npos;
    for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < needle.size(); ++j) {
            if (haystack[i + j] != needle[j]) {
                ok = false;
                break;
            }
        }
        if (ok) return i;
    }
    return std::string::npos;
}

}  // namespace detail

// An entity is selected iff its tokenized name occurs as a contiguous token
// subsequence of the context. Output is ordered by first match position,
// ties by KB order. Matching compares token strings, so it is independent
// of any vocabulary.
inline std::vector<TextMatch> select_text_knowledge(const std::vector<std::string>& context_tokens,
                                                    const KnowledgeBase& kb) {
    // Compare via a local token interning so "<unk>" collisions cannot
    // produce false matches.
    std::unordered_map<std::string, int> intern;
    auto intern_ids = [&](const std::vector<std::string>& tokens) {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) {
            auto [it, inserted] = intern.emplace(t, static_cast<int>(intern.size()));
            ids.push_back(it->second);
        }
        return ids;
    };
    const std::vector<int> ctx = intern_ids(context_tokens);
    std::vector<TextMatch> out;
    for (const auto& e : kb.entities) {
        const auto name_tokens = tokenize(e.name);
        const std::size_t pos = detail::find_subsequence(ctx, intern_ids(name_tokens));
        if (pos == std::string::npos) continue;
        TextMatch m;
        m.entity_name = e.name;
        m.linearization = linearize_attributes(e);
        m.first_position = pos;
        out.push_back(std::move(m));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TextMatch& a, const TextMatch& b) { return a.first_position < b.first_position; });
    return out;
}

// Per context image: every entity with at least one image is scored by the
// max cosine similarity over its images, and the k best are returned sorted
// by score descending, ties by KB order.
inline std::vector<std::vector<VisionMatch>> select_vision_knowledge(
    const std::vector<std::string>& image_ids, const ImageFeatureStore& store, const KnowledgeBase& kb,
    std::size_t k) {
    if (k == 0) throw Error(ErrorCategory::config, "select_vision_knowledge: k must be positive");
    std::vector<std::vector<VisionMatch>> out;
    out.reserve(image_ids.size());
    for (const auto& img : image_ids) {
        const auto& query = store.feature(img);
        std::vector<std::pair<double, std::size_t>> scored;  // (score, kb index)
        for (std::size_t p = 0; p < kb.entities.size(); ++p) {
            const auto& e = kb.entities[p];
            if (e.image_ids.empty()) continue;
            double best = -2.0;
            for (const auto& ei : e.image_ids) best = std::max(best, cosine(query, store.feature(ei)));
            scored.emplace_back(best, p);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::vector<VisionMatch> matches;
        for (std::size_t i = 0; i < scored.size() && i < k; ++i) {
            VisionMatch m;
            m.entity_name = kb.entities[scored[i].second].name;
            m.score = scored[i].first;
            m.linearization = linearize_attributes(kb.entities[scored[i].second]);
            matches.push_back(std::move(m));
        }
        out.push_back(std::move(matches));
    }
    return out;
}

// Order-preserving union of selected linearizations (text first, then
// per-image vision lists), deduplicated at entity granularity.
inline std::vector<int> knowledge_union_ids(const SelectedKnowledge& sel, const Vocabulary& vocab,
                                            bool include_text, bool include_vision) {
    std::vector<int> ids;
    std::unordered_set<std::string> seen;  // by case-insensitive entity name
    auto add = [&](const std::string& name, const std::vector<std::string>& lin) {
        if (!seen.insert(lowercase_copy(name)).second) return;
        for (int id : encode_ids(lin, vocab)) ids.push_back(id);
    };
    if (include_text)
        for (const auto& m : sel.text_knowledge) add(m.entity_name, m.linearization);
    if (include_vision)
        for (const auto& per_image : sel.vision_knowledge)
            for (const auto& m : per_image) add(m.entity_name, m.linearization);
    return ids;
}

// Runs both selectors for one example and assembles the decoder knowledge.
inline SelectedKnowledge assemble_selected(const DialogExample& example, const KnowledgeBase& kb,
                                           const ImageFeatureStore& store, const Vocabulary& vocab,
                                           std::size_t k) {
    SelectedKnowledge sel;
    sel.text_knowledge = select_text_knowledge(decode_ids(example.context_token_ids, vocab), kb);
    sel.vision_knowledge = select_vision_knowledge(example.context_image_ids, store, kb, k);
    sel.decoder_knowledge_ids = knowledge_union_ids(sel, vocab, true, true);
    return sel;
}

}  // namespace dkmd

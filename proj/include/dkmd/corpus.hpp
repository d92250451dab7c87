#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dkmd/error.hpp"

namespace dkmd {

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

inline bool is_detached_punct(char c) {
    switch (c) {
        case '.': case ',': case '!': case '?': case ';': case ':': case '\'': case '"':
            return true;
        default:
            return false;
    }
}

// Lowercases, splits on whitespace, and detaches .,!?;:'" as single-char
// tokens. Total on any input; empty input yields an empty sequence.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_detached_punct(c)) {
            flush();
            out.emplace_back(1, c);
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kSep = 4;
    static constexpr int kKbSep = 5;
    static constexpr int kNumSpecials = 6;

    static const std::vector<std::string>& special_tokens() {
        static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>",
                                                          "<unk>", "<sep>", "<kb>"};
        return specials;
    }

    Vocabulary() {
        for (const auto& s : special_tokens()) append(s);
    }

    // Appends a non-special token; rejects duplicates.
    void add_token(const std::string& token) {
        if (index_.count(token)) throw Error(ErrorCategory::invariant, "duplicate vocabulary token: " + token);
        append(token);
    }

    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    std::size_t size() const { return tokens_.size(); }

    int id_of(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw Error(ErrorCategory::invariant, "token id out of range: " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    void append(const std::string& token) {
        index_[token] = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

inline std::vector<int> encode_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
    return ids;
}

inline std::vector<std::string> decode_ids(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int id : ids) tokens.push_back(vocab.token_of(id));
    return tokens;
}

// ---------------------------------------------------------------------------
// Corpus types
// ---------------------------------------------------------------------------

enum class Speaker { user, agent };

struct Turn {
    Speaker speaker = Speaker::user;
    std::string text;
    std::vector<std::string> image_ids;
};

struct Dialog {
    std::string id;
    std::vector<Turn> turns;
};

struct DialogExample {
    std::string id;  // "<dialog_id>:<n>"
    std::vector<int> context_token_ids;
    std::vector<std::string> context_image_ids;
    std::vector<int> response_token_ids;  // bos ... eos
};

class ImageFeatureStore {
  public:
    ImageFeatureStore() = default;
    explicit ImageFeatureStore(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return features_.size(); }
    bool contains(const std::string& id) const { return features_.count(id) != 0; }

    void add(const std::string& id, std::vector<double> feature) {
        if (feature.size() != dim_)
            throw Error(ErrorCategory::invariant, "feature dimension mismatch for image " + id);
        double norm2 = 0.0;
        for (double v : feature) norm2 += v * v;
        if (norm2 <= 0.0)
            throw Error(ErrorCategory::invariant, "zero-norm feature for image " + id);
        if (features_.count(id))
            throw Error(ErrorCategory::invariant, "duplicate image id " + id);
        features_.emplace(id, std::move(feature));
    }

    const std::vector<double>& feature(const std::string& id) const {
        auto it = features_.find(id);
        if (it == features_.end())
            throw Error(ErrorCategory::reference, "unknown image id " + id);
        return it->second;
    }

    std::vector<std::string> ids_sorted() const {
        std::vector<std::string> out;
        out.reserve(features_.size());
        for (const auto& [k, v] : features_) out.push_back(k);
        std::sort(out.begin(), out.end());
        return out;
    }

  private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, std::vector<double>> features_;
};

struct KnowledgeEntity {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attributes;  // file order
    std::vector<std::string> image_ids;
};

struct KnowledgeBase {
    std::vector<KnowledgeEntity> entities;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// kb_sep + name tokens + "key is value" phrases in stored attribute order.
inline std::vector<std::string> linearize_attributes(const KnowledgeEntity& entity) {
    std::vector<std::string> out;
    out.push_back(Vocabulary::special_tokens()[Vocabulary::kKbSep]);
    for (auto& t : tokenize(entity.name)) out.push_back(t);
    for (const auto& [key, value] : entity.attributes) {
        for (auto& t : tokenize(key)) out.push_back(t);
        out.emplace_back("is");
        for (auto& t : tokenize(value)) out.push_back(t);
    }
    return out;
}

// Vocabulary = specials, then corpus/KB tokens with frequency >= min_freq,
// ordered by descending frequency then lexicographically.
inline Vocabulary build_vocabulary(const std::vector<Dialog>& dialogs, const KnowledgeBase& kb,
                                   std::size_t min_freq = 1) {
    if (dialogs.empty()) throw Error(ErrorCategory::invariant, "build_vocabulary: no dialogs");
    if (min_freq < 1) throw Error(ErrorCategory::config, "build_vocabulary: min_freq must be positive");
    std::map<std::string, std::size_t> freq;
    auto count = [&](const std::vector<std::string>& tokens) {
        for (const auto& t : tokens) {
            bool is_special = false;
            for (const auto& s : Vocabulary::special_tokens())
                if (t == s) is_special = true;
            if (!is_special) ++freq[t];
        }
    };
    for (const auto& d : dialogs)
        for (const auto& turn : d.turns) count(tokenize(turn.text));
    for (const auto& e : kb.entities) count(linearize_attributes(e));

    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [token, n] : ranked)
        if (n >= min_freq) vocab.add_token(token);
    if (vocab.size() == static_cast<std::size_t>(Vocabulary::kNumSpecials))
        throw Error(ErrorCategory::invariant, "build_vocabulary: vocabulary has only special tokens");
    return vocab;
}

// One example per agent turn with at least one preceding turn: context is up
// to `window` preceding turns joined with <sep>, response is bos..eos.
inline std::vector<DialogExample> extract_examples(const Dialog& dialog, const Vocabulary& vocab,
                                                   std::size_t window = 2) {
    if (window < 1) throw Error(ErrorCategory::config, "extract_examples: window must be >= 1");
    std::vector<DialogExample> out;
    for (std::size_t i = 0; i < dialog.turns.size(); ++i) {
        if (dialog.turns[i].speaker != Speaker::agent || i == 0) continue;
        DialogExample ex;
        ex.id = dialog.id + ":" + std::to_string(out.size());
        const std::size_t first = i >= window ? i - window : 0;
        for (std::size_t j = first; j < i; ++j) {
            if (j > first) ex.context_token_ids.push_back(Vocabulary::kSep);
            for (int id : encode_ids(tokenize(dialog.turns[j].text), vocab))
                ex.context_token_ids.push_back(id);
            for (const auto& img : dialog.turns[j].image_ids) {
                if (std::find(ex.context_image_ids.begin(), ex.context_image_ids.end(), img) ==
                    ex.context_image_ids.end())
                    ex.context_image_ids.push_back(img);
            }
        }
        if (ex.context_token_ids.empty())
            throw Error(ErrorCategory::invariant, "extract_examples: empty context in dialog " + dialog.id);
        ex.response_token_ids.push_back(Vocabulary::kBos);
        for (int id : encode_ids(tokenize(dialog.turns[i].text), vocab))
            ex.response_token_ids.push_back(id);
        ex.response_token_ids.push_back(Vocabulary::kEos);
        out.push_back(std::move(ex));
    }
    return out;
}

inline std::vector<DialogExample> extract_all_examples(const std::vector<Dialog>& dialogs,
                                                       const Vocabulary& vocab, std::size_t window = 2) {
    std::vector<DialogExample> out;
    for (const auto& d : dialogs) {
        auto exs = extract_examples(d, vocab, window);
        out.insert(out.end(), exs.begin(), exs.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// File loading
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open " + path);
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCategory::parse, path + ": " + e.what());
    }
    return j;
}

template <typename J>
const J& require_field(const J& j, const char* field, const std::string& where) {
    if (!j.contains(field))
        throw Error(ErrorCategory::schema, where + ": missing field '" + field + "'");
    return j.at(field);
}

}  // namespace detail

inline std::vector<Dialog> load_corpus(const std::string& path) {
    auto j = detail::parse_json_file(path);
    std::vector<Dialog> dialogs;
    std::unordered_set<std::string> seen_ids;
    for (const auto& jd : detail::require_field(j, "dialogs", path)) {
        Dialog d;
        d.id = detail::require_field(jd, "id", path).template get<std::string>();
        if (!seen_ids.insert(d.id).second)
            throw Error(ErrorCategory::invariant, path + ": duplicate dialog id " + d.id);
        for (const auto& jt : detail::require_field(jd, "turns", path)) {
            Turn t;
            const std::string sp = detail::require_field(jt, "speaker", path).template get<std::string>();
            if (sp == "user")
                t.speaker = Speaker::user;
            else if (sp == "agent")
                t.speaker = Speaker::agent;
            else
                throw Error(ErrorCategory::schema, path + ": unknown speaker '" + sp + "'");
            t.text = detail::require_field(jt, "text", path).template get<std::string>();
            if (jt.contains("images"))
                for (const auto& img : jt.at("images")) t.image_ids.push_back(img.template get<std::string>());
            d.turns.push_back(std::move(t));
        }
        if (d.turns.empty())
            throw Error(ErrorCategory::invariant, path + ": dialog " + d.id + " has no turns");
        dialogs.push_back(std::move(d));
    }
    return dialogs;
}

inline std::string lowercase_copy(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline KnowledgeBase load_kb(const std::string& path) {
    auto j = detail::parse_json_file(path);
    KnowledgeBase kb;
    std::unordered_set<std::string> seen;
    for (const auto& je : detail::require_field(j, "entities", path)) {
        KnowledgeEntity e;
        e.name = detail::require_field(je, "name", path).template get<std::string>();
        if (e.name.empty()) throw Error(ErrorCategory::invariant, path + ": entity with empty name");
        if (!seen.insert(lowercase_copy(e.name)).second)
            throw Error(ErrorCategory::invariant, path + ": duplicate entity name " + e.name);
        const auto& attrs = detail::require_field(je, "attributes", path);
        std::unordered_set<std::string> keys;
        for (auto it = attrs.begin(); it != attrs.end(); ++it) {
            if (!keys.insert(it.key()).second)
                throw Error(ErrorCategory::invariant, path + ": duplicate attribute key " + it.key());
            e.attributes.emplace_back(it.key(), it.value().template get<std::string>());
        }
        if (je.contains("images"))
            for (const auto& img : je.at("images")) e.image_ids.push_back(img.template get<std::string>());
        kb.entities.push_back(std::move(e));
    }
    return kb;
}

inline ImageFeatureStore load_features(const std::string& path) {
    auto j = detail::parse_json_file(path);
    const std::size_t dim = detail::require_field(j, "dim", path).template get<std::size_t>();
    if (dim == 0) throw Error(ErrorCategory::invariant, path + ": dim must be positive");
    ImageFeatureStore store(dim);
    for (auto it = detail::require_field(j, "features", path).begin();
         it != j.at("features").end(); ++it) {
        std::vector<double> vec;
        for (const auto& v : it.value()) vec.push_back(v.template get<double>());
        store.add(it.key(), std::move(vec));
    }
    return store;
}

// Cross-file reference check: every image id mentioned in dialogs or KB
// entities must resolve in the feature store.
inline void validate_references(const std::vector<Dialog>& dialogs, const KnowledgeBase& kb,
                                const ImageFeatureStore& store) {
    for (const auto& d : dialogs)
        for (const auto& t : d.turns)
            for (const auto& img : t.image_ids)
                if (!store.contains(img))
                    throw Error(ErrorCategory::reference,
                                "dialog " + d.id + " references unknown image " + img);
    for (const auto& e : kb.entities)
        for (const auto& img : e.image_ids)
            if (!store.contains(img))
                throw Error(ErrorCategory::reference,
                            "entity " + e.name + " references unknown image " + img);
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::io, "cannot write " + path);
    for (const auto& t : vocab.tokens()) out << t << "\n";
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() < static_cast<std::size_t>(Vocabulary::kNumSpecials))
        throw Error(ErrorCategory::schema, path + ": vocabulary shorter than the special set");
    for (int i = 0; i < Vocabulary::kNumSpecials; ++i)
        if (lines[static_cast<std::size_t>(i)] != Vocabulary::special_tokens()[static_cast<std::size_t>(i)])
            throw Error(ErrorCategory::schema, path + ": special tokens out of order");
    Vocabulary vocab;
    for (std::size_t i = Vocabulary::kNumSpecials; i < lines.size(); ++i) vocab.add_token(lines[i]);
    return vocab;
}

// Deterministic unit-norm pseudo-random feature vectors, for tests and the
// shipped toy data.
inline ImageFeatureStore make_synthetic_features(const std::vector<std::string>& image_ids,
                                                 std::size_t dim, std::uint64_t seed) {
    ImageFeatureStore store(dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (const auto& id : image_ids) {
        std::vector<double> v(dim);
        double norm2 = 0.0;
        while (norm2 == 0.0) {
            for (auto& x : v) x = gauss(rng);
            norm2 = 0.0;
            for (double x : v) norm2 += x * x;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& x : v) x *= inv;
        store.add(id, std::move(v));
    }
    return store;
}

}  // namespace dkmd

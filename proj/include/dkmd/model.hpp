#pragma once

#include <random>
#include <string>
#include <vector>

#include "dkmd/decoder.hpp"
#include "dkmd/fusion.hpp"

namespace dkmd {

// All learnable parameters of one model build. The registry lists them in a
// fixed canonical order used by initialization, Adam, and checkpoints.
struct Model {
    ModelConfig config;
    EmbeddingParams embedding;
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;
    FusionParams fusion;
    OutputHead head;
    VariantToggles toggles;
    std::vector<Parameter*> registry;

    // The registry holds raw pointers into the parameter structs, so copies
    // and moves must re-point it.
    Model() = default;
    Model(const Model& other) { copy_from(other); }
    Model& operator=(const Model& other) {
        if (this != &other) copy_from(other);
        return *this;
    }
    Model(Model&& other) noexcept { move_from(std::move(other)); }
    Model& operator=(Model&& other) noexcept {
        if (this != &other) move_from(std::move(other));
        return *this;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const Parameter* p : registry) n += p->size();
        return n;
    }

    void rebuild_registry() {
        registry.clear();
        auto reg = [&](Parameter& p) { registry.push_back(&p); };
        auto reg_attn = [&](AttentionParams& a) {
            for (auto& p : a.wq) reg(p);
            for (auto& p : a.wk) reg(p);
            for (auto& p : a.wv) reg(p);
            reg(a.wo);
        };
        auto reg_ffn = [&](FfnParams& f) {
            reg(f.w1);
            reg(f.b1);
            reg(f.w2);
            reg(f.b2);
        };
        auto reg_ln = [&](LayerNormParams& l) {
            reg(l.gain);
            reg(l.bias);
        };
        reg(embedding.token_table);
        reg(embedding.pos_table);
        for (auto& layer : encoder) {
            reg_attn(layer.msa);
            reg_ffn(layer.ffn);
            reg_ln(layer.ln_msa);
            reg_ln(layer.ln_ffn);
        }
        for (auto& layer : decoder) {
            reg_attn(layer.mmsa);
            if (layer.dkda) {
                reg(layer.dkda->wd);
                reg(layer.dkda->wdk);
                reg_ln(layer.dkda->ln);
            }
            reg_attn(layer.meda);
            reg_ffn(layer.ffn);
            reg_ln(layer.ln_mmsa);
            reg_ln(layer.ln_meda);
            reg_ln(layer.ln_ffn);
        }
        if (fusion.image_proj) reg(*fusion.image_proj);
        if (fusion.local) {
            reg(fusion.local->wv);
            reg(fusion.local->wk);
            reg_ln(fusion.local->ln);
        }
        if (fusion.vision) {
            reg(fusion.vision->wv);
            reg(fusion.vision->wc);
        }
        if (fusion.text) {
            reg(fusion.text->wt);
            reg(fusion.text->wvr);
            reg(fusion.text->wf);
        }
        reg(head.w);
        reg(head.b);
    }

  private:
    void copy_from(const Model& other) {
        config = other.config;
        embedding = other.embedding;
        encoder = other.encoder;
        decoder = other.decoder;
        fusion = other.fusion;
        head = other.head;
        toggles = other.toggles;
        rebuild_registry();
    }

    void move_from(Model&& other) {
        config = other.config;
        embedding = std::move(other.embedding);
        encoder = std::move(other.encoder);
        decoder = std::move(other.decoder);
        fusion = std::move(other.fusion);
        head = std::move(other.head);
        toggles = other.toggles;
        rebuild_registry();
        other.registry.clear();
    }
};

namespace detail {

inline AttentionParams make_attention(const std::string& prefix, std::size_t dim, std::size_t heads) {
    AttentionParams a;
    const std::size_t hd = dim / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        a.wq.emplace_back(prefix + ".wq." + std::to_string(h), dim, hd);
        a.wk.emplace_back(prefix + ".wk." + std::to_string(h), dim, hd);
        a.wv.emplace_back(prefix + ".wv." + std::to_string(h), dim, hd);
    }
    a.wo = Parameter(prefix + ".wo", dim, dim);
    return a;
}

inline FfnParams make_ffn(const std::string& prefix, std::size_t dim, std::size_t ffn_dim) {
    FfnParams f;
    f.w1 = Parameter(prefix + ".w1", dim, ffn_dim);
    f.b1 = Parameter(prefix + ".b1", 1, ffn_dim);
    f.w2 = Parameter(prefix + ".w2", ffn_dim, dim);
    f.b2 = Parameter(prefix + ".b2", 1, dim);
    return f;
}

inline LayerNormParams make_ln(const std::string& prefix, std::size_t dim) {
    LayerNormParams l;
    l.gain = Parameter(prefix + ".gain", 1, dim);
    l.bias = Parameter(prefix + ".bias", 1, dim);
    return l;
}

}  // namespace detail

// Builds the parameter set for a config and initializes it from the seed:
// weight matrices and embedding tables U(-0.08, 0.08), layer-norm gains 1,
// all biases 0.
inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    m.toggles = toggles_for(config.variant);
    const std::size_t d = config.dim;

    m.embedding.token_table = Parameter("embedding.tokens", config.vocab_size, d);
    m.embedding.pos_table = Parameter("embedding.positions", config.max_positions, d);

    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "encoder." + std::to_string(l);
        EncoderLayerParams layer;
        layer.msa = detail::make_attention(p + ".msa", d, config.heads);
        layer.ffn = detail::make_ffn(p + ".ffn", d, config.ffn_dim);
        layer.ln_msa = detail::make_ln(p + ".ln_msa", d);
        layer.ln_ffn = detail::make_ln(p + ".ln_ffn", d);
        m.encoder.push_back(std::move(layer));
    }
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "decoder." + std::to_string(l);
        DecoderLayerParams layer;
        layer.mmsa = detail::make_attention(p + ".mmsa", d, config.heads);
        if (m.toggles.dkda) {
            DkdaParams k;
            k.wd = Parameter(p + ".dkda.wd", d, d);
            k.wdk = Parameter(p + ".dkda.wdk", d, d);
            k.ln = detail::make_ln(p + ".dkda.ln", d);
            layer.dkda = std::move(k);
        }
        layer.meda = detail::make_attention(p + ".meda", d, config.heads);
        layer.ffn = detail::make_ffn(p + ".ffn", d, config.ffn_dim);
        layer.ln_mmsa = detail::make_ln(p + ".ln_mmsa", d);
        layer.ln_meda = detail::make_ln(p + ".ln_meda", d);
        layer.ln_ffn = detail::make_ln(p + ".ln_ffn", d);
        m.decoder.push_back(std::move(layer));
    }

    if (m.toggles.use_images) {
        m.fusion.image_proj = Parameter("fusion.image_proj", config.image_dim, d);
        if (m.toggles.local_attend) {
            LocalAttendParams la;
            la.wv = Parameter("fusion.local.wv", d, d);
            la.wk = Parameter("fusion.local.wk", d, d);
            la.ln = detail::make_ln("fusion.local.ln", d);
            m.fusion.local = std::move(la);
        }
        if (m.toggles.vision_refine) {
            VisionRefineParams vr;
            vr.wv = Parameter("fusion.vision.wv", d, d);
            vr.wc = Parameter("fusion.vision.wc", d, d);
            m.fusion.vision = std::move(vr);
        }
        if (m.toggles.text_refine) {
            TextRefineParams tr;
            tr.wt = Parameter("fusion.text.wt", d, d);
            tr.wvr = Parameter("fusion.text.wvr", 2 * d, d);
            tr.wf = Parameter("fusion.text.wf", 2 * d, d);
            m.fusion.text = std::move(tr);
        }
    }

    m.head.w = Parameter("head.w", d, config.vocab_size);
    m.head.b = Parameter("head.b", 1, config.vocab_size);

    m.rebuild_registry();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-0.08, 0.08);
    for (Parameter* p : m.registry) {
        const bool is_gain = p->name.size() >= 5 && p->name.rfind(".gain") == p->name.size() - 5;
        const bool is_bias =
            (p->name.size() >= 5 && p->name.rfind(".bias") == p->name.size() - 5) ||
            (p->name.size() >= 3 && (p->name.rfind(".b1") == p->name.size() - 3 ||
                                     p->name.rfind(".b2") == p->name.size() - 3)) ||
            p->name == "head.b";
        if (is_gain) {
            p->value.fill(1.0);
        } else if (is_bias) {
            p->value.fill(0.0);
        } else {
            for (auto& x : p->value.data) x = uniform(rng);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Documented closed-form parameter counts
// ---------------------------------------------------------------------------

// Per encoder layer: 4D^2 (attention) + 2 D Dff + Dff + D (FFN) + 4D (LN).
inline std::size_t encoder_layer_param_count(const ModelConfig& c) {
    return 4 * c.dim * c.dim + 2 * c.dim * c.ffn_dim + c.ffn_dim + c.dim + 4 * c.dim;
}

// Per decoder layer without DKDA: 8D^2 + 2 D Dff + Dff + D + 6D.
inline std::size_t decoder_layer_param_count(const ModelConfig& c) {
    return 8 * c.dim * c.dim + 2 * c.dim * c.ffn_dim + c.ffn_dim + c.dim + 6 * c.dim;
}

// DKDA group per layer: 2D^2 + 2D.
inline std::size_t dkda_group_count(const ModelConfig& c) { return 2 * c.dim * c.dim + 2 * c.dim; }

// Local knowledge attention group: 2D^2 + 2D.
inline std::size_t local_group_count(const ModelConfig& c) { return 2 * c.dim * c.dim + 2 * c.dim; }

// Vision refinement group: 2D^2.
inline std::size_t vision_refine_group_count(const ModelConfig& c) { return 2 * c.dim * c.dim; }

// Text refinement group: 5D^2.
inline std::size_t text_refine_group_count(const ModelConfig& c) { return 5 * c.dim * c.dim; }

inline std::size_t image_proj_group_count(const ModelConfig& c) { return c.image_dim * c.dim; }

// Closed-form total for any variant; verified against registry enumeration.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
    const VariantToggles t = toggles_for(c.variant);
    std::size_t n = c.vocab_size * c.dim + c.max_positions * c.dim;  // embeddings
    n += c.layers * encoder_layer_param_count(c);
    n += c.layers * decoder_layer_param_count(c);
    if (t.dkda) n += c.layers * dkda_group_count(c);
    if (t.use_images) {
        n += image_proj_group_count(c);
        if (t.local_attend) n += local_group_count(c);
        if (t.vision_refine) n += vision_refine_group_count(c);
        if (t.text_refine) n += text_refine_group_count(c);
    }
    n += c.dim * c.vocab_size + c.vocab_size;  // output head
    return n;
}

// ---------------------------------------------------------------------------
// Forward orchestration
// ---------------------------------------------------------------------------

inline std::vector<int> decoder_knowledge_ids(const Model& model, const SelectedKnowledge& sel,
                                              const Vocabulary& vocab) {
    if (!model.toggles.dkda) return {};
    return knowledge_union_ids(sel, vocab, model.toggles.text_knowledge_in_decoder,
                               model.toggles.vision_knowledge_in_decoder);
}

struct ExampleForward {
    FusedContext fused;
    Tensor logits;  // [(N_R - 1) x |U|]
};

inline ExampleForward forward_example(Tape& tape, Model& model, const DialogExample& example,
                                      const SelectedKnowledge& sel, const ImageFeatureStore& store,
                                      const Vocabulary& vocab) {
    FuseInputs in;
    in.embedding = &model.embedding;
    in.encoder = &model.encoder;
    in.fusion = &model.fusion;
    in.store = &store;
    in.vocab = &vocab;
    ExampleForward out;
    out.fused = fuse(tape, in, example, sel, model.config, model.toggles);
    out.logits = teacher_forced_logits(tape, model.embedding, model.decoder, model.head,
                                       example.response_token_ids,
                                       decoder_knowledge_ids(model, sel, vocab),
                                       out.fused.encoder_memory);
    return out;
}

struct GenerationResult {
    std::vector<int> token_ids;  // generated ids, bos excluded
    FusedContext fused;
    std::vector<KnowledgeAttentionTrace> knowledge_attention;  // per step, if requested
};

inline GenerationResult generate_example(Model& model, const DialogExample& example,
                                         const SelectedKnowledge& sel, const ImageFeatureStore& store,
                                         const Vocabulary& vocab, std::size_t max_len,
                                         bool trace_attention = false) {
    Tape tape;
    FuseInputs in;
    in.embedding = &model.embedding;
    in.encoder = &model.encoder;
    in.fusion = &model.fusion;
    in.store = &store;
    in.vocab = &vocab;
    GenerationResult out;
    out.fused = fuse(tape, in, example, sel, model.config, model.toggles);
    out.token_ids = greedy_generate(model.embedding, model.decoder, model.head,
                                    decoder_knowledge_ids(model, sel, vocab), out.fused.encoder_memory,
                                    tape, max_len, trace_attention ? &out.knowledge_attention : nullptr);
    return out;
}

}  // namespace dkmd

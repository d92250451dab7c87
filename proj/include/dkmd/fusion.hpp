#pragma once

#include <optional>
#include <vector>

#include "dkmd/backbone.hpp"
#include "dkmd/knowledge.hpp"

namespace dkmd {

// Parameter groups for the context-fusion block. Groups are optional: a
// variant instantiates exactly the groups its toggles enable.
struct LocalAttendParams {
    Parameter wv;  // [D x D], projects the image query
    Parameter wk;  // [D x D], projects the knowledge embeddings
    LayerNormParams ln;
};

struct VisionRefineParams {
    Parameter wv;  // [D x D], projects the refined image query
    Parameter wc;  // [D x D], projects the context embeddings
};

struct TextRefineParams {
    Parameter wt;   // [D x D]
    Parameter wvr;  // [2D x D], projects the refined visual rows
    Parameter wf;   // [2D x D], final fusion projection
};

struct FusionParams {
    std::optional<Parameter> image_proj;  // [D_v x D]
    std::optional<LocalAttendParams> local;
    std::optional<VisionRefineParams> vision;
    std::optional<TextRefineParams> text;
};

struct FusedContext {
    Tensor t_e;             // [N_t x D] fused textual representation
    Tensor encoder_memory;  // [N_t x D] after the remaining encoder layers
    std::size_t input_length = 0;  // N_t

    // Attention diagnostics, copied off the tape.
    std::vector<nn::Array> local_confidences;   // a_j per image
    std::vector<nn::Array> vision_confidences;  // o_j per image
    std::optional<nn::Array> image_confidences; // S_E
};

// X_t = context ids ++ selected text knowledge ids ++ selected vision
// knowledge ids, truncated from the front when the result exceeds
// max_positions. The vision segment is a union over per-image lists, so an
// entity retrieved for several images contributes once.
inline std::vector<int> build_global_input(const DialogExample& example, const SelectedKnowledge& sel,
                                           const Vocabulary& vocab, std::size_t max_positions,
                                           bool include_text = true, bool include_vision = true) {
    std::vector<int> ids = example.context_token_ids;
    if (include_text)
        for (const auto& m : sel.text_knowledge)
            for (int id : encode_ids(m.linearization, vocab)) ids.push_back(id);
    if (include_vision) {
        std::unordered_set<std::string> seen;
        for (const auto& per_image : sel.vision_knowledge)
            for (const auto& m : per_image) {
                if (!seen.insert(lowercase_copy(m.entity_name)).second) continue;
                for (int id : encode_ids(m.linearization, vocab)) ids.push_back(id);
            }
    }
    if (ids.size() > max_positions)
        ids.erase(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(ids.size() - max_positions));
    return ids;
}

// T_t: encoder layers 1..l* applied to the embedded global input.
inline Tensor global_textual_encode_prefix(Tape& tape, EmbeddingParams& embedding,
                                           std::vector<EncoderLayerParams>& layers,
                                           const std::vector<int>& x_t_ids, std::size_t fusion_layer) {
    Tensor e_t = embed_positionwise(tape, embedding, x_t_ids);
    return encode_range(tape, layers, e_t, 0, fusion_layer);
}

// E_v: one row per context image, feature(v_j) * W_img.
inline Tensor project_images(Tape& tape, const std::vector<std::string>& image_ids,
                             const ImageFeatureStore& store, Parameter& image_proj) {
    nn::Array raw(image_ids.size(), store.dim());
    for (std::size_t j = 0; j < image_ids.size(); ++j) {
        const auto& f = store.feature(image_ids[j]);
        std::copy(f.begin(), f.end(), raw.data.begin() + static_cast<std::ptrdiff_t>(j * store.dim()));
    }
    return nn::matmul(tape.constant(raw), tape.use(image_proj));
}

// a_j = softmax((v_j Wv)(K Wk)^T); out = LN(v_j + a_j K). The residual adds
// the attention-weighted unprojected knowledge embeddings.
inline Tensor local_knowledge_attend(Tape& tape, LocalAttendParams& params, const Tensor& v_j,
                                     const Tensor& knowledge_emb, nn::Array* confidence_out = nullptr) {
    Tensor v_bar = nn::matmul(v_j, tape.use(params.wv));                 // [1 x D]
    Tensor k_bar = nn::matmul(knowledge_emb, tape.use(params.wk));      // [N x D]
    Tensor a_j = nn::softmax_rows(nn::matmul(v_bar, nn::transpose(k_bar)));  // [1 x N]
    if (confidence_out != nullptr) *confidence_out = nn::Array(1, a_j.cols(), a_j.value());
    Tensor mixed = nn::matmul(a_j, knowledge_emb);  // [1 x D]
    return apply_layer_norm(tape, params.ln, nn::add(v_j, mixed));
}

// o_j = softmax((v~_j Wv)(E_c Wc)^T); v^_j = o_j P_j^T where column g of P_j
// is concat(t_g, v_j). The value rows carry the original v_j, the query uses
// the knowledge-refined v~_j, and E_c is the position-wise embedding of the
// raw textual context.
inline Tensor vision_refine(Tape& tape, VisionRefineParams& params, const Tensor& v_tilde,
                            const Tensor& v_j, const Tensor& e_c, nn::Array* confidence_out = nullptr) {
    if (e_c.rows() < 1) throw Error(ErrorCategory::shape, "vision_refine: empty context");
    Tensor q = nn::matmul(v_tilde, tape.use(params.wv));            // [1 x D]
    Tensor keys = nn::matmul(e_c, tape.use(params.wc));             // [N_T x D]
    Tensor o_j = nn::softmax_rows(nn::matmul(q, nn::transpose(keys)));  // [1 x N_T]
    if (confidence_out != nullptr) *confidence_out = nn::Array(1, o_j.cols(), o_j.value());
    Tensor p_rows = nn::concat_cols({e_c, nn::repeat_rows(v_j, e_c.rows())});  // [N_T x 2D]
    return nn::matmul(o_j, p_rows);  // [1 x 2D]
}

// T_bar = T_t Wt; E_bar = E^_v Wvr; S_E = softmax_rows(T_bar E_bar^T);
// T_E = [T_t ; S_E E_bar] Wf.
inline Tensor text_refine(Tape& tape, TextRefineParams& params, const Tensor& t_t,
                          const Tensor& e_hat_v, nn::Array* confidence_out = nullptr) {
    if (e_hat_v.rows() < 1) throw Error(ErrorCategory::shape, "text_refine: no image rows");
    Tensor t_bar = nn::matmul(t_t, tape.use(params.wt));       // [N_t x D]
    Tensor e_bar = nn::matmul(e_hat_v, tape.use(params.wvr));  // [N_V x D]
    Tensor s_e = nn::softmax_rows(nn::matmul(t_bar, nn::transpose(e_bar)));  // [N_t x N_V]
    if (confidence_out != nullptr) *confidence_out = nn::Array(s_e.rows(), s_e.cols(), s_e.value());
    Tensor gathered = nn::matmul(s_e, e_bar);  // [N_t x D]
    return nn::matmul(nn::concat_cols({t_t, gathered}), tape.use(params.wf));
}

struct FuseInputs {
    EmbeddingParams* embedding = nullptr;
    std::vector<EncoderLayerParams>* encoder = nullptr;
    FusionParams* fusion = nullptr;
    const ImageFeatureStore* store = nullptr;
    const Vocabulary* vocab = nullptr;
};

// Full context-fusion pipeline: prefix-encode X_t to l*, run the per-image
// knowledge attention and both cross-modal refinements, then apply the
// remaining encoder layers. Bypasses: no images (or text refinement off)
// leaves T_E = T_t; an image without knowledge keeps its projected feature.
inline FusedContext fuse(Tape& tape, const FuseInputs& in, const DialogExample& example,
                         const SelectedKnowledge& sel, const ModelConfig& config,
                         const VariantToggles& toggles) {
    FusedContext out;
    const std::vector<int> x_t_ids =
        build_global_input(example, sel, *in.vocab, config.max_positions,
                           toggles.text_knowledge_in_input, toggles.vision_knowledge_in_input);
    out.input_length = x_t_ids.size();
    Tensor t_t = global_textual_encode_prefix(tape, *in.embedding, *in.encoder, x_t_ids,
                                              config.fusion_layer);

    static const std::vector<std::string> kNoImages;
    const std::vector<std::string>& images = toggles.use_images ? example.context_image_ids : kNoImages;
    const bool run_vision_branch = !images.empty() && toggles.text_refine;
    if (!run_vision_branch) {
        out.t_e = t_t;
    } else {
        Tensor e_v = project_images(tape, images, *in.store, *in.fusion->image_proj);
        Tensor e_c;  // embedded raw context, built lazily for the refinements
        if (toggles.vision_refine)
            e_c = embed_positionwise(tape, *in.embedding, example.context_token_ids);
        std::vector<Tensor> refined_rows;
        for (std::size_t j = 0; j < images.size(); ++j) {
            Tensor v_j = nn::slice_rows(e_v, j, 1);
            Tensor v_tilde = v_j;
            std::vector<int> k_ids;
            if (toggles.local_attend) {
                if (toggles.local_attend_add_text)
                    for (const auto& m : sel.text_knowledge)
                        for (int id : encode_ids(m.linearization, *in.vocab)) k_ids.push_back(id);
                for (const auto& m : sel.vision_knowledge[j])
                    for (int id : encode_ids(m.linearization, *in.vocab)) k_ids.push_back(id);
            }
            if (!k_ids.empty()) {
                Tensor k_emb = embed_positionwise(tape, *in.embedding, k_ids);
                nn::Array a_j;
                v_tilde = local_knowledge_attend(tape, *in.fusion->local, v_j, k_emb, &a_j);
                out.local_confidences.push_back(std::move(a_j));
            } else {
                out.local_confidences.emplace_back();
            }
            Tensor v_hat;
            if (toggles.vision_refine) {
                nn::Array o_j;
                v_hat = vision_refine(tape, *in.fusion->vision, v_tilde, v_j, e_c, &o_j);
                out.vision_confidences.push_back(std::move(o_j));
            } else {
                // 2D zero-extension of the knowledge-refined row.
                v_hat = nn::concat_cols({v_tilde, tape.constant(1, config.dim)});
                out.vision_confidences.emplace_back();
            }
            refined_rows.push_back(v_hat);
        }
        Tensor e_hat_v = refined_rows.size() == 1 ? refined_rows[0] : nn::concat_rows(refined_rows);
        nn::Array s_e;
        out.t_e = text_refine(tape, *in.fusion->text, t_t, e_hat_v, &s_e);
        out.image_confidences = std::move(s_e);
    }
    out.encoder_memory =
        encode_range(tape, *in.encoder, out.t_e, config.fusion_layer, config.layers);
    return out;
}

}  // namespace dkmd

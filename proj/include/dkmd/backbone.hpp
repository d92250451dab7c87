#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dkmd/tensor.hpp"
#include "dkmd/variant.hpp"

namespace dkmd {

struct ModelConfig {
    std::size_t dim = 32;            // D
    std::size_t layers = 2;          // L, shared by encoder and decoder
    std::size_t heads = 2;           // H
    std::size_t ffn_dim = 128;       // D_ff
    std::size_t max_positions = 64;
    std::size_t vocab_size = 0;      // |U|
    std::size_t image_dim = 512;     // D_v
    std::size_t retrieval_k = 1;     // k
    std::size_t fusion_layer = 1;    // l*, 1-based
    AblationVariant variant = AblationVariant::full;

    std::size_t head_dim() const { return dim / heads; }

    void validate() const {
        if (dim == 0 || layers == 0 || heads == 0 || ffn_dim == 0)
            throw Error(ErrorCategory::config, "model dimensions must be positive");
        if (dim % heads != 0)
            throw Error(ErrorCategory::config, "dim must be divisible by heads");
        if (fusion_layer < 1 || fusion_layer > layers)
            throw Error(ErrorCategory::config, "fusion_layer must be in [1, layers]");
        if (vocab_size == 0)
            throw Error(ErrorCategory::config, "vocab_size must be positive");
        if (retrieval_k == 0)
            throw Error(ErrorCategory::config, "retrieval k must be positive");
        if (max_positions == 0)
            throw Error(ErrorCategory::config, "max_positions must be positive");
    }
};

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

using nn::Parameter;
using nn::Tape;
using nn::Tensor;

struct AttentionParams {
    std::vector<Parameter> wq, wk, wv;  // per head, [D x D/H]
    Parameter wo;                       // [D x D]
};

struct FfnParams {
    Parameter w1, b1, w2, b2;
};

struct LayerNormParams {
    Parameter gain, bias;
};

struct EmbeddingParams {
    Parameter token_table;  // [|U| x D]
    Parameter pos_table;    // [max_positions x D]
};

struct EncoderLayerParams {
    AttentionParams msa;
    FfnParams ffn;
    LayerNormParams ln_msa, ln_ffn;
};

struct DkdaParams {
    Parameter wd;   // [D x D], projects the decoder state
    Parameter wdk;  // [D x D], projects the knowledge embeddings
    LayerNormParams ln;
};

struct DecoderLayerParams {
    AttentionParams mmsa;
    std::optional<DkdaParams> dkda;  // absent when the variant drops the sub-layer
    AttentionParams meda;
    FfnParams ffn;
    LayerNormParams ln_mmsa, ln_meda, ln_ffn;
};

struct OutputHead {
    Parameter w;  // [D x |U|]
    Parameter b;  // [1 x |U|]
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Row q = token_table[ids[q]] + pos_table[q].
inline Tensor embed_positionwise(Tape& tape, EmbeddingParams& params, const std::vector<int>& ids) {
    const std::size_t max_pos = params.pos_table.value.rows;
    if (ids.size() > max_pos)
        throw Error(ErrorCategory::shape, "embed_positionwise: sequence longer than max_positions");
    if (ids.empty())
        throw Error(ErrorCategory::shape, "embed_positionwise: empty sequence");
    Tensor tok = nn::embedding_rows(tape.use(params.token_table), ids);
    Tensor pos = nn::slice_rows(tape.use(params.pos_table), 0, ids.size());
    return nn::add(tok, pos);
}

// Boolean mask, true = attention blocked. Row-major [m x n].
using AttentionMask = std::vector<std::uint8_t>;

inline AttentionMask causal_mask(std::size_t m) {
    AttentionMask mask(m * m, 0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) mask[i * m + j] = 1;
    return mask;
}

constexpr double kMaskValue = -1e9;

// Scaled dot-product attention with H heads: per head,
// softmax((Q Wq)(K Wk)^T / sqrt(D/H) + mask) (V Wv); heads concatenated and
// output-projected. Masked logits are set to -1e9 pre-softmax.
inline Tensor multi_head_attention(Tape& tape, AttentionParams& params, const Tensor& q_in,
                                   const Tensor& k_in, const Tensor& v_in,
                                   const AttentionMask* mask = nullptr) {
    const std::size_t m = q_in.rows(), n = k_in.rows();
    if (k_in.rows() != v_in.rows())
        throw Error(ErrorCategory::shape, "attention: key/value length mismatch");
    if (mask != nullptr) {
        if (mask->size() != m * n) throw Error(ErrorCategory::shape, "attention: mask shape mismatch");
        for (std::size_t i = 0; i < m; ++i) {
            bool open = false;
            for (std::size_t j = 0; j < n; ++j)
                if (!(*mask)[i * n + j]) open = true;
            if (!open) throw Error(ErrorCategory::invariant, "attention: fully masked row");
        }
    }
    Tensor mask_add;
    if (mask != nullptr) {
        nn::Array ma(m, n, 0.0);
        for (std::size_t i = 0; i < m * n; ++i)
            if ((*mask)[i]) ma.data[i] = kMaskValue;
        mask_add = tape.constant(ma);
    }
    const std::size_t heads = params.wq.size();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(params.wq[0].value.cols));
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = nn::matmul(q_in, tape.use(params.wq[h]));
        Tensor kh = nn::matmul(k_in, tape.use(params.wk[h]));
        Tensor vh = nn::matmul(v_in, tape.use(params.wv[h]));
        Tensor logits = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_scale);
        if (mask != nullptr) logits = nn::add(logits, mask_add);
        Tensor weights = nn::softmax_rows(logits);
        head_outputs.push_back(nn::matmul(weights, vh));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : nn::concat_cols(head_outputs);
    return nn::matmul(merged, tape.use(params.wo));
}

// Same computation, also exposing the per-head attention weights (values
// copied off the tape) for inspection and tests.
inline Tensor multi_head_attention_probed(Tape& tape, AttentionParams& params, const Tensor& q_in,
                                          const Tensor& k_in, const Tensor& v_in,
                                          const AttentionMask* mask,
                                          std::vector<nn::Array>* weights_out) {
    const std::size_t m = q_in.rows(), n = k_in.rows();
    Tensor mask_add;
    if (mask != nullptr) {
        nn::Array ma(m, n, 0.0);
        for (std::size_t i = 0; i < m * n; ++i)
            if ((*mask)[i]) ma.data[i] = kMaskValue;
        mask_add = tape.constant(ma);
    }
    const std::size_t heads = params.wq.size();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(params.wq[0].value.cols));
    std::vector<Tensor> head_outputs;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = nn::matmul(q_in, tape.use(params.wq[h]));
        Tensor kh = nn::matmul(k_in, tape.use(params.wk[h]));
        Tensor vh = nn::matmul(v_in, tape.use(params.wv[h]));
        Tensor logits = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_scale);
        if (mask != nullptr) logits = nn::add(logits, mask_add);
        Tensor weights = nn::softmax_rows(logits);
        if (weights_out != nullptr)
            weights_out->push_back(nn::Array(weights.rows(), weights.cols(), weights.value()));
        head_outputs.push_back(nn::matmul(weights, vh));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : nn::concat_cols(head_outputs);
    return nn::matmul(merged, tape.use(params.wo));
}

inline Tensor apply_layer_norm(Tape& tape, LayerNormParams& ln, const Tensor& x) {
    return nn::layer_norm_rows(x, tape.use(ln.gain), tape.use(ln.bias));
}

inline Tensor apply_ffn(Tape& tape, FfnParams& f, const Tensor& x) {
    return nn::ffn(x, tape.use(f.w1), tape.use(f.b1), tape.use(f.w2), tape.use(f.b2));
}

// Z_S = LN(MSA(Z) + Z); out = LN(FFN(Z_S) + Z_S).
inline Tensor encoder_layer(Tape& tape, EncoderLayerParams& params, const Tensor& z) {
    Tensor attn = multi_head_attention(tape, params.msa, z, z, z);
    Tensor z_s = apply_layer_norm(tape, params.ln_msa, nn::add(attn, z));
    Tensor f = apply_ffn(tape, params.ffn, z_s);
    return apply_layer_norm(tape, params.ln_ffn, nn::add(f, z_s));
}

// Applies encoder layers [first, last) in order; an empty range is the
// identity. Supports the fusion split (run 1..l*, fuse, run l*+1..L).
inline Tensor encode_range(Tape& tape, std::vector<EncoderLayerParams>& layers, const Tensor& x,
                           std::size_t first, std::size_t last) {
    if (last > layers.size() || first > last)
        throw Error(ErrorCategory::shape, "encode_range: bad layer range");
    Tensor z = x;
    for (std::size_t l = first; l < last; ++l) z = encoder_layer(tape, layers[l], z);
    return z;
}

inline Tensor encode(Tape& tape, std::vector<EncoderLayerParams>& layers, const Tensor& x,
                     std::size_t stop_at) {
    return encode_range(tape, layers, x, 0, stop_at);
}

// q_S = LN(MMSA(q)+q) with a causal mask; q_E = LN(MEDA(q_S, enc)+q_S);
// out = LN(FFN(q_E)+q_E). The knowledge-free decoder layer.
inline Tensor vanilla_decoder_layer(Tape& tape, DecoderLayerParams& params, const Tensor& q,
                                    const Tensor& enc_memory) {
    const AttentionMask mask = causal_mask(q.rows());
    Tensor self = multi_head_attention(tape, params.mmsa, q, q, q, &mask);
    Tensor q_s = apply_layer_norm(tape, params.ln_mmsa, nn::add(self, q));
    Tensor cross = multi_head_attention(tape, params.meda, q_s, enc_memory, enc_memory);
    Tensor q_e = apply_layer_norm(tape, params.ln_meda, nn::add(cross, q_s));
    Tensor f = apply_ffn(tape, params.ffn, q_e);
    return apply_layer_norm(tape, params.ln_ffn, nn::add(f, q_e));
}

struct LogitsAndProbs {
    Tensor logits;
    Tensor probs;
};

inline LogitsAndProbs project_logits(Tape& tape, OutputHead& head, const Tensor& q) {
    Tensor logits = nn::add_rowvec(nn::matmul(q, tape.use(head.w)), tape.use(head.b));
    return {logits, nn::softmax_rows(logits)};
}

}  // namespace dkmd

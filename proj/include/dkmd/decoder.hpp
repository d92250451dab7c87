#pragma once

#include <optional>
#include <vector>

#include "dkmd/backbone.hpp"
#include "dkmd/fusion.hpp"

namespace dkmd {

// Dot-product knowledge attention for a block of decoder rows:
// a_d = softmax((q Wd)(E_k Wdk)^T) per row; out = LN(q + a_d E_k). The
// residual adds the unprojected knowledge embeddings. Row-wise application
// and this batched form coincide because every step is per-row.
inline Tensor dkda(Tape& tape, DkdaParams& params, const Tensor& q, const Tensor& knowledge_emb,
                   nn::Array* confidence_out = nullptr) {
    Tensor q_bar = nn::matmul(q, tape.use(params.wd));                     // [r x D]
    Tensor e_bar = nn::matmul(knowledge_emb, tape.use(params.wdk));        // [N x D]
    Tensor a_d = nn::softmax_rows(nn::matmul(q_bar, nn::transpose(e_bar)));  // [r x N]
    if (confidence_out != nullptr) *confidence_out = nn::Array(a_d.rows(), a_d.cols(), a_d.value());
    Tensor mixed = nn::matmul(a_d, knowledge_emb);  // [r x D]
    return apply_layer_norm(tape, params.ln, nn::add(q, mixed));
}

// Decoder layer with the knowledge sub-layer inserted between the masked
// self-attention and the encoder-decoder attention. With no knowledge (or no
// DKDA parameters) the sub-layer is skipped entirely, so the layer equals
// vanilla_decoder_layer on shared parameters.
inline Tensor dkda_decoder_layer(Tape& tape, DecoderLayerParams& params, const Tensor& q,
                                 const std::optional<Tensor>& knowledge_emb, const Tensor& enc_memory,
                                 nn::Array* confidence_out = nullptr) {
    const AttentionMask mask = causal_mask(q.rows());
    Tensor self = multi_head_attention(tape, params.mmsa, q, q, q, &mask);
    Tensor q_s = apply_layer_norm(tape, params.ln_mmsa, nn::add(self, q));
    Tensor q_k = q_s;
    if (params.dkda.has_value() && knowledge_emb.has_value())
        q_k = dkda(tape, *params.dkda, q_s, *knowledge_emb, confidence_out);
    Tensor cross = multi_head_attention(tape, params.meda, q_k, enc_memory, enc_memory);
    Tensor q_e = apply_layer_norm(tape, params.ln_meda, nn::add(cross, q_k));
    Tensor f = apply_ffn(tape, params.ffn, q_e);
    return apply_layer_norm(tape, params.ln_ffn, nn::add(f, q_e));
}

// Per-layer, per-step knowledge confidences captured during decoding.
struct KnowledgeAttentionTrace {
    std::vector<nn::Array> per_layer;  // a_d rows for each decoder layer
};

// Runs the decoder stack over embedded input rows.
inline Tensor run_decoder_stack(Tape& tape, std::vector<DecoderLayerParams>& layers, const Tensor& input,
                                const std::optional<Tensor>& knowledge_emb, const Tensor& enc_memory,
                                KnowledgeAttentionTrace* trace = nullptr) {
    Tensor q = input;
    for (auto& layer : layers) {
        nn::Array conf;
        q = dkda_decoder_layer(tape, layer, q, knowledge_emb, enc_memory,
                               trace != nullptr ? &conf : nullptr);
        if (trace != nullptr) trace->per_layer.push_back(std::move(conf));
    }
    return q;
}

// Teacher-forced logits for one example: decoder input is the response
// without its final token; row n predicts response token n+1.
inline Tensor teacher_forced_logits(Tape& tape, EmbeddingParams& embedding,
                                    std::vector<DecoderLayerParams>& layers, OutputHead& head,
                                    const std::vector<int>& response_ids,
                                    const std::vector<int>& knowledge_ids, const Tensor& enc_memory) {
    if (response_ids.size() < 2)
        throw Error(ErrorCategory::shape, "teacher_forced_logits: response needs at least bos+eos");
    std::vector<int> input_ids(response_ids.begin(), response_ids.end() - 1);
    Tensor input = embed_positionwise(tape, embedding, input_ids);
    std::optional<Tensor> k_emb;
    if (!knowledge_ids.empty()) k_emb = embed_positionwise(tape, embedding, knowledge_ids);
    Tensor q = run_decoder_stack(tape, layers, input, k_emb, enc_memory);
    return project_logits(tape, head, q).logits;
}

// Greedy decoding: start from bos, append the argmax token each step, stop
// at eos or when max_len tokens have been generated. Returns the generated
// ids (bos excluded, eos included when emitted).
inline std::vector<int> greedy_generate(EmbeddingParams& embedding,
                                        std::vector<DecoderLayerParams>& layers, OutputHead& head,
                                        const std::vector<int>& knowledge_ids, const Tensor& enc_memory,
                                        Tape& tape, std::size_t max_len,
                                        std::vector<KnowledgeAttentionTrace>* traces = nullptr) {
    if (max_len < 1) throw Error(ErrorCategory::config, "generate: max_len must be positive");
    std::vector<int> prefix = {Vocabulary::kBos};
    std::vector<int> generated;
    for (std::size_t step = 0; step < max_len; ++step) {
        Tensor input = embed_positionwise(tape, embedding, prefix);
        std::optional<Tensor> k_emb;
        if (!knowledge_ids.empty()) k_emb = embed_positionwise(tape, embedding, knowledge_ids);
        KnowledgeAttentionTrace trace;
        Tensor q = run_decoder_stack(tape, layers, input, k_emb, enc_memory,
                                     traces != nullptr ? &trace : nullptr);
        Tensor logits = project_logits(tape, head, q).logits;
        const int next = static_cast<int>(nn::argmax_row(logits, logits.rows() - 1));
        if (traces != nullptr) {
            // Keep only the final row of each layer's confidence matrix: the
            // current step's attention over the knowledge tokens.
            KnowledgeAttentionTrace last;
            for (const auto& conf : trace.per_layer) {
                if (conf.size() == 0) {
                    last.per_layer.emplace_back();
                    continue;
                }
                nn::Array row(1, conf.cols);
                for (std::size_t j = 0; j < conf.cols; ++j) row.data[j] = conf.at(conf.rows - 1, j);
                last.per_layer.push_back(std::move(row));
            }
            traces->push_back(std::move(last));
        }
        generated.push_back(next);
        if (next == Vocabulary::kEos) break;
        prefix.push_back(next);
    }
    return generated;
}

}  // namespace dkmd

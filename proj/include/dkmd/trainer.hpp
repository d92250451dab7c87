#pragma once

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "dkmd/model.hpp"
#include "dkmd/optim.hpp"

namespace dkmd {

// Mean cross entropy over positions: -log softmax(logits)[target] averaged
// over rows. Rows whose target equals ignore_id (if >= 0) are excluded, so
// padded batches can mask pad positions out of the mean.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id = -1) {
    if (targets.size() != logits.rows())
        throw Error(ErrorCategory::shape, "cross_entropy: target length mismatch");
    return nn::nll_mean(nn::log_softmax_rows(logits), targets, ignore_id);
}

struct TrainItem {
    DialogExample example;
    SelectedKnowledge selection;
};

struct TrainState {
    Model model;
    nn::AdamOptimizer optimizer;
    std::mt19937_64 shuffle_rng;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
};

inline TrainState make_train_state(const ModelConfig& config, std::uint64_t seed, double lr) {
    TrainState s;
    s.model = build_model(config, seed);
    s.optimizer.lr = lr;
    s.optimizer.init(s.model.registry);
    s.shuffle_rng.seed(seed + 1);
    s.seed = seed;
    return s;
}

// One optimizer step over a batch of examples: per-example losses are
// averaged into a single scalar, backward populates the gradients, Adam
// updates, and the gradients are zeroed again.
inline double train_step(TrainState& state, const std::vector<const TrainItem*>& batch,
                         const ImageFeatureStore& store, const Vocabulary& vocab) {
    if (batch.empty()) throw Error(ErrorCategory::invariant, "train_step: empty batch");
    nn::zero_grads(state.model.registry);
    Tape tape;
    Tensor total;
    for (const TrainItem* item : batch) {
        auto fwd = forward_example(tape, state.model, item->example, item->selection, store, vocab);
        std::vector<int> targets(item->example.response_token_ids.begin() + 1,
                                 item->example.response_token_ids.end());
        Tensor loss = cross_entropy(fwd.logits, targets);
        total = total.valid() ? nn::add(total, loss) : loss;
    }
    Tensor mean_loss = nn::scale(total, 1.0 / static_cast<double>(batch.size()));
    tape.backward(mean_loss);
    const double value = mean_loss.scalar();
    state.optimizer.step(state.model.registry);
    nn::zero_grads(state.model.registry);
    return value;
}

struct EpochRecord {
    std::uint64_t epoch = 0;
    double mean_loss = 0.0;
    double wall_ms = 0.0;
    std::optional<double> val_loss;
};

// Forward-only mean cross entropy over a set of examples.
inline double evaluate_mean_loss(Model& model, const std::vector<TrainItem>& items,
                                 const ImageFeatureStore& store, const Vocabulary& vocab) {
    if (items.empty()) throw Error(ErrorCategory::invariant, "evaluate_mean_loss: no examples");
    double total = 0.0;
    for (const auto& item : items) {
        Tape tape;
        auto fwd = forward_example(tape, model, item.example, item.selection, store, vocab);
        std::vector<int> targets(item.example.response_token_ids.begin() + 1,
                                 item.example.response_token_ids.end());
        total += cross_entropy(fwd.logits, targets).scalar();
    }
    return total / static_cast<double>(items.size());
}

struct TrainOptions {
    std::uint64_t epochs = 500;
    std::size_t batch_size = 1;
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(const TrainState&, std::uint64_t /*finished epoch*/)> on_checkpoint;
    std::uint64_t checkpoint_every = 0;  // 0: final checkpoint only
    // Optional held-out set: per-epoch mean CE is recorded, and on_best
    // fires whenever it improves. Training still runs the fixed epoch count.
    const std::vector<TrainItem>* validation = nullptr;
    std::function<void(const TrainState&, double /*val loss*/)> on_best;
};

// Seeded-shuffle training loop. Resuming a loaded state continues from its
// stored epoch with the stored shuffle RNG, so the trajectory matches an
// uninterrupted run exactly.
inline std::vector<EpochRecord> train_loop(TrainState& state, const std::vector<TrainItem>& items,
                                           const ImageFeatureStore& store, const Vocabulary& vocab,
                                           const TrainOptions& opts) {
    if (items.empty()) throw Error(ErrorCategory::invariant, "train_loop: empty training set");
    if (opts.batch_size < 1) throw Error(ErrorCategory::config, "train_loop: batch_size must be >= 1");
    std::vector<EpochRecord> records;
    double best_val = std::numeric_limits<double>::infinity();
    while (state.epoch < opts.epochs) {
        const auto start = std::chrono::steady_clock::now();
        // Each epoch's order must be a pure function of the RNG state, or a
        // resumed run could not reproduce an uninterrupted one.
        std::vector<std::size_t> order(items.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), state.shuffle_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t i = 0; i < order.size(); i += opts.batch_size) {
            std::vector<const TrainItem*> batch;
            for (std::size_t j = i; j < std::min(i + opts.batch_size, order.size()); ++j)
                batch.push_back(&items[order[j]]);
            loss_sum += train_step(state, batch, store, vocab) * static_cast<double>(batch.size());
            seen += batch.size();
        }
        ++state.epoch;
        EpochRecord rec;
        rec.epoch = state.epoch;
        rec.mean_loss = loss_sum / static_cast<double>(seen);
        if (opts.validation != nullptr) {
            rec.val_loss = evaluate_mean_loss(state.model, *opts.validation, store, vocab);
            if (*rec.val_loss < best_val) {
                best_val = *rec.val_loss;
                if (opts.on_best) opts.on_best(state, best_val);
            }
        }
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (opts.on_epoch) opts.on_epoch(rec);
        if (opts.on_checkpoint && opts.checkpoint_every > 0 && state.epoch % opts.checkpoint_every == 0 &&
            state.epoch < opts.epochs)
            opts.on_checkpoint(state, state.epoch);
        records.push_back(rec);
    }
    if (opts.on_checkpoint) opts.on_checkpoint(state, state.epoch);
    return records;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization: versioned binary, little-endian 64-bit floats,
// length-prefixed name/shape records. Round trips are bit-exact.
// ---------------------------------------------------------------------------

namespace ckpt {

constexpr char kMagic[8] = {'D', 'K', 'M', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw Error(ErrorCategory::io, "checkpoint write failed");
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(out, b, 8);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(out, b, 4);
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    if (!s.empty()) write_bytes(out, s.data(), s.size());
}

inline void read_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw Error(ErrorCategory::parse, "checkpoint truncated");
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    read_bytes(in, b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    read_bytes(in, b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline std::string read_string(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    if (n > (1ull << 32)) throw Error(ErrorCategory::parse, "checkpoint string length corrupt");
    std::string s(n, '\0');
    if (n > 0) read_bytes(in, s.data(), n);
    return s;
}

inline void write_f64_array(std::ostream& out, const std::vector<double>& a) {
    write_u64(out, a.size());
    for (double v : a) write_f64(out, v);
}

inline std::vector<double> read_f64_array(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    std::vector<double> a(n);
    for (auto& v : a) v = read_f64(in);
    return a;
}

}  // namespace ckpt

inline void save_checkpoint(const std::string& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCategory::io, "cannot write checkpoint " + path);
    ckpt::write_bytes(out, ckpt::kMagic, sizeof(ckpt::kMagic));
    ckpt::write_u32(out, ckpt::kVersion);
    const ModelConfig& c = state.model.config;
    ckpt::write_u64(out, c.dim);
    ckpt::write_u64(out, c.layers);
    ckpt::write_u64(out, c.heads);
    ckpt::write_u64(out, c.ffn_dim);
    ckpt::write_u64(out, c.max_positions);
    ckpt::write_u64(out, c.vocab_size);
    ckpt::write_u64(out, c.image_dim);
    ckpt::write_u64(out, c.retrieval_k);
    ckpt::write_u64(out, c.fusion_layer);
    ckpt::write_string(out, variant_name(c.variant));

    ckpt::write_u64(out, state.model.registry.size());
    for (const Parameter* p : state.model.registry) {
        ckpt::write_string(out, p->name);
        ckpt::write_u64(out, p->value.rows);
        ckpt::write_u64(out, p->value.cols);
        for (double v : p->value.data) ckpt::write_f64(out, v);
    }

    ckpt::write_f64(out, state.optimizer.lr);
    ckpt::write_f64(out, state.optimizer.beta1);
    ckpt::write_f64(out, state.optimizer.beta2);
    ckpt::write_f64(out, state.optimizer.eps);
    ckpt::write_u64(out, state.optimizer.step_count);
    ckpt::write_u64(out, state.optimizer.m.size());
    for (const auto& a : state.optimizer.m) ckpt::write_f64_array(out, a);
    for (const auto& a : state.optimizer.v) ckpt::write_f64_array(out, a);

    std::ostringstream rng;
    rng << state.shuffle_rng;
    ckpt::write_string(out, rng.str());
    ckpt::write_u64(out, state.seed);
    ckpt::write_u64(out, state.epoch);
}

inline TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCategory::io, "cannot open checkpoint " + path);
    char magic[8];
    ckpt::read_bytes(in, magic, sizeof(magic));
    if (std::memcmp(magic, ckpt::kMagic, sizeof(magic)) != 0)
        throw Error(ErrorCategory::parse, path + ": not a checkpoint file");
    const std::uint32_t version = ckpt::read_u32(in);
    if (version != ckpt::kVersion)
        throw Error(ErrorCategory::schema,
                    path + ": unsupported checkpoint version " + std::to_string(version));
    ModelConfig c;
    c.dim = ckpt::read_u64(in);
    c.layers = ckpt::read_u64(in);
    c.heads = ckpt::read_u64(in);
    c.ffn_dim = ckpt::read_u64(in);
    c.max_positions = ckpt::read_u64(in);
    c.vocab_size = ckpt::read_u64(in);
    c.image_dim = ckpt::read_u64(in);
    c.retrieval_k = ckpt::read_u64(in);
    c.fusion_layer = ckpt::read_u64(in);
    c.variant = parse_variant(ckpt::read_string(in));

    TrainState state;
    state.model = build_model(c, 0);
    const std::uint64_t n_params = ckpt::read_u64(in);
    if (n_params != state.model.registry.size())
        throw Error(ErrorCategory::schema, path + ": parameter record count mismatch");
    for (Parameter* p : state.model.registry) {
        const std::string name = ckpt::read_string(in);
        const std::uint64_t rows = ckpt::read_u64(in);
        const std::uint64_t cols = ckpt::read_u64(in);
        if (name != p->name)
            throw Error(ErrorCategory::schema, path + ": unexpected parameter " + name);
        if (rows != p->value.rows || cols != p->value.cols)
            throw Error(ErrorCategory::invariant, path + ": shape mismatch for " + name);
        for (auto& v : p->value.data) v = ckpt::read_f64(in);
    }

    state.optimizer.lr = ckpt::read_f64(in);
    state.optimizer.beta1 = ckpt::read_f64(in);
    state.optimizer.beta2 = ckpt::read_f64(in);
    state.optimizer.eps = ckpt::read_f64(in);
    state.optimizer.step_count = ckpt::read_u64(in);
    const std::uint64_t n_moments = ckpt::read_u64(in);
    if (n_moments != state.model.registry.size())
        throw Error(ErrorCategory::schema, path + ": optimizer moment count mismatch");
    state.optimizer.m.clear();
    state.optimizer.v.clear();
    for (std::uint64_t i = 0; i < n_moments; ++i) state.optimizer.m.push_back(ckpt::read_f64_array(in));
    for (std::uint64_t i = 0; i < n_moments; ++i) state.optimizer.v.push_back(ckpt::read_f64_array(in));
    for (std::size_t i = 0; i < state.model.registry.size(); ++i) {
        if (state.optimizer.m[i].size() != state.model.registry[i]->size() ||
            state.optimizer.v[i].size() != state.model.registry[i]->size())
            throw Error(ErrorCategory::invariant, path + ": optimizer moment shape mismatch");
    }

    std::istringstream rng(ckpt::read_string(in));
    rng >> state.shuffle_rng;
    if (!rng) throw Error(ErrorCategory::parse, path + ": corrupt RNG state");
    state.seed = ckpt::read_u64(in);
    state.epoch = ckpt::read_u64(in);
    return state;
}

// Rejects resuming with a config that differs from the checkpointed one.
inline void ensure_config_match(const ModelConfig& got, const ModelConfig& expected) {
    const bool same = got.dim == expected.dim && got.layers == expected.layers &&
                      got.heads == expected.heads && got.ffn_dim == expected.ffn_dim &&
                      got.max_positions == expected.max_positions &&
                      got.vocab_size == expected.vocab_size && got.image_dim == expected.image_dim &&
                      got.retrieval_k == expected.retrieval_k &&
                      got.fusion_layer == expected.fusion_layer && got.variant == expected.variant;
    if (!same)
        throw Error(ErrorCategory::invariant, "checkpoint model config does not match the requested config");
}

}  // namespace dkmd

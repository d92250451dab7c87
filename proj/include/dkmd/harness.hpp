#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dkmd/metrics.hpp"
#include "dkmd/runconfig.hpp"

namespace dkmd {

// Loaded corpus artifacts plus precomputed per-example knowledge selection.
struct Workbench {
    std::vector<Dialog> dialogs;
    KnowledgeBase kb;
    ImageFeatureStore store;
    Vocabulary vocab;
    std::vector<TrainItem> items;
    std::vector<TrainItem> validation_items;  // from val_corpus, possibly empty
};

inline Workbench load_workbench(const RunConfig& rc, bool need_vocab_file = true) {
    require_readable(rc.corpus, "corpus");
    require_readable(rc.kb, "kb");
    require_readable(rc.features, "features");
    Workbench wb;
    wb.dialogs = load_corpus(rc.corpus);
    wb.kb = load_kb(rc.kb);
    wb.store = load_features(rc.features);
    validate_references(wb.dialogs, wb.kb, wb.store);
    if (rc.image_dim != wb.store.dim())
        throw Error(ErrorCategory::invariant,
                    "image_dim " + std::to_string(rc.image_dim) + " does not match feature store dim " +
                        std::to_string(wb.store.dim()));
    if (need_vocab_file) {
        require_readable(rc.vocab, "vocab");
        wb.vocab = load_vocabulary(rc.vocab);
    } else {
        wb.vocab = build_vocabulary(wb.dialogs, wb.kb, rc.min_freq);
    }
    auto assemble = [&](const std::vector<Dialog>& dialogs) {
        std::vector<TrainItem> items;
        for (const auto& ex : extract_all_examples(dialogs, wb.vocab, rc.window)) {
            TrainItem item;
            item.selection = assemble_selected(ex, wb.kb, wb.store, wb.vocab, rc.k);
            item.example = ex;
            items.push_back(std::move(item));
        }
        return items;
    };
    wb.items = assemble(wb.dialogs);
    if (!rc.val_corpus.empty()) {
        require_readable(rc.val_corpus, "val_corpus");
        auto val_dialogs = load_corpus(rc.val_corpus);
        validate_references(val_dialogs, wb.kb, wb.store);
        wb.validation_items = assemble(val_dialogs);
    }
    return wb;
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(ErrorCategory::io, "cannot write " + path);
    out << j.dump(2) << "\n";
}

inline nlohmann::ordered_json report_json(const RunConfig& rc, const EvalReport& report) {
    nlohmann::ordered_json j;
    j["config"] = config_json(rc);
    nlohmann::ordered_json b;
    for (std::size_t n = 1; n <= 4; ++n) b[std::to_string(n)] = report.bleu[n - 1];
    j["bleu"] = b;
    j["nist"] = report.nist;
    j["n_examples"] = report.n_examples;
    nlohmann::ordered_json exs = nlohmann::ordered_json::array();
    for (const auto& st : report.examples) {
        nlohmann::ordered_json e;
        e["id"] = st.id;
        e["candidate_len"] = st.candidate_len;
        e["reference_len"] = st.reference_len;
        nlohmann::ordered_json matched = nlohmann::ordered_json::array();
        nlohmann::ordered_json total = nlohmann::ordered_json::array();
        for (std::size_t n = 0; n < 4; ++n) {
            matched.push_back(st.matched[n]);
            total.push_back(st.total[n]);
        }
        e["matched_ngrams"] = matched;
        e["total_ngrams"] = total;
        exs.push_back(e);
    }
    j["examples"] = exs;
    return j;
}

// ---------------------------------------------------------------------------
// Command bodies (thin wrappers around the modules, shared with tests)
// ---------------------------------------------------------------------------

inline std::string cmd_build_vocab(const RunConfig& rc) {
    require_readable(rc.corpus, "corpus");
    require_readable(rc.kb, "kb");
    const auto dialogs = load_corpus(rc.corpus);
    const auto kb = load_kb(rc.kb);
    const Vocabulary vocab = build_vocabulary(dialogs, kb, rc.min_freq);
    std::filesystem::create_directories(rc.out);
    const std::string path = (std::filesystem::path(rc.out) / "vocab.txt").string();
    save_vocabulary(vocab, path);
    return path;
}

inline nlohmann::ordered_json selection_json(const RunConfig& rc, const Workbench& wb) {
    nlohmann::ordered_json per_example = nlohmann::ordered_json::object();
    for (const auto& item : wb.items) {
        nlohmann::ordered_json e;
        nlohmann::ordered_json text = nlohmann::ordered_json::array();
        for (const auto& m : item.selection.text_knowledge) text.push_back(m.entity_name);
        e["text"] = text;
        nlohmann::ordered_json vision = nlohmann::ordered_json::array();
        for (const auto& per_image : item.selection.vision_knowledge) {
            nlohmann::ordered_json lst = nlohmann::ordered_json::array();
            for (const auto& m : per_image) {
                nlohmann::ordered_json v;
                v["name"] = m.entity_name;
                v["score"] = m.score;
                lst.push_back(v);
            }
            vision.push_back(lst);
        }
        e["vision"] = vision;
        per_example[item.example.id] = e;
    }
    nlohmann::ordered_json j;
    j["config"] = config_json(rc);
    j["selections"] = per_example;
    return j;
}

struct TrainRunResult {
    std::vector<EpochRecord> records;
    std::string checkpoint_path;
    std::string best_checkpoint_path;  // empty when no validation set given
    std::string log_path;
};

// Trains (or resumes) on the workbench and writes checkpoint + JSONL log
// under rc.out. The log's first line echoes the effective config; every
// following line is {"epoch":..,"mean_loss":..,"wall_ms":..} plus
// "val_loss" when a validation corpus is configured. Training always runs
// the fixed epoch count; the best-on-validation state is written separately
// as model.best.ckpt.
inline TrainRunResult cmd_train(const RunConfig& rc, Workbench& wb, bool resume = false) {
    std::filesystem::create_directories(rc.out);
    TrainRunResult result;
    result.checkpoint_path = (std::filesystem::path(rc.out) / "model.ckpt").string();
    result.log_path = (std::filesystem::path(rc.out) / "train.log.jsonl").string();

    TrainState state;
    if (resume) {
        require_readable(rc.checkpoint, "checkpoint");
        state = load_checkpoint(rc.checkpoint);
        ensure_config_match(rc.model_config(wb.vocab.size()), state.model.config);
    } else {
        state = make_train_state(rc.model_config(wb.vocab.size()), rc.seed, rc.lr);
    }

    std::ofstream log(result.log_path, resume ? std::ios::app : std::ios::out);
    if (!log) throw Error(ErrorCategory::io, "cannot write " + result.log_path);
    if (!resume) {
        nlohmann::ordered_json head;
        head["config"] = config_json(rc);
        log << head.dump() << "\n";
    }

    TrainOptions opts;
    opts.epochs = rc.epochs;
    opts.batch_size = rc.batch_size;
    opts.checkpoint_every = rc.checkpoint_every;
    opts.on_epoch = [&](const EpochRecord& rec) {
        nlohmann::ordered_json j;
        j["epoch"] = rec.epoch;
        j["mean_loss"] = rec.mean_loss;
        j["wall_ms"] = rec.wall_ms;
        log << j.dump() << "\n";
    };
    opts.on_checkpoint = [&](const TrainState& s, std::uint64_t) {
        save_checkpoint(result.checkpoint_path, s);
    };
    result.records = train_loop(state, wb.items, wb.store, wb.vocab, opts);
    return result;
}

inline nlohmann::ordered_json generation_json(const RunConfig& rc, Workbench& wb, Model& model,
                                              bool dump_attention, bool dump_fusion) {
    nlohmann::ordered_json gens = nlohmann::ordered_json::array();
    for (const auto& item : wb.items) {
        auto gen = generate_example(model, item.example, item.selection, wb.store, wb.vocab, rc.max_len,
                                    dump_attention);
        nlohmann::ordered_json g;
        g["id"] = item.example.id;
        const TokenSeq tokens = surface_tokens(gen.token_ids, wb.vocab);
        std::string text;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i > 0) text += ' ';
            text += tokens[i];
        }
        g["tokens"] = tokens;
        g["text"] = text;
        if (dump_attention) {
            nlohmann::ordered_json steps = nlohmann::ordered_json::array();
            for (const auto& trace : gen.knowledge_attention) {
                nlohmann::ordered_json layers = nlohmann::ordered_json::array();
                for (const auto& conf : trace.per_layer) layers.push_back(conf.data);
                steps.push_back(layers);
            }
            g["knowledge_attention"] = steps;
        }
        if (dump_fusion) {
            nlohmann::ordered_json f;
            nlohmann::ordered_json local = nlohmann::ordered_json::array();
            for (const auto& a : gen.fused.local_confidences) local.push_back(a.data);
            f["local_confidences"] = local;
            nlohmann::ordered_json vision = nlohmann::ordered_json::array();
            for (const auto& o : gen.fused.vision_confidences) vision.push_back(o.data);
            f["vision_confidences"] = vision;
            if (gen.fused.image_confidences) {
                nlohmann::ordered_json se = nlohmann::ordered_json::array();
                const auto& s = *gen.fused.image_confidences;
                for (std::size_t r = 0; r < s.rows; ++r) {
                    nlohmann::ordered_json row = nlohmann::ordered_json::array();
                    for (std::size_t c = 0; c < s.cols; ++c) row.push_back(s.at(r, c));
                    se.push_back(row);
                }
                f["image_confidences"] = se;
            }
            g["fusion"] = f;
        }
        gens.push_back(g);
    }
    nlohmann::ordered_json j;
    j["config"] = config_json(rc);
    j["generations"] = gens;
    return j;
}

// ---------------------------------------------------------------------------
// Ablation and sensitivity harnesses
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string variant;
    std::size_t parameter_count = 0;
    std::array<double, 4> bleu{};
    double nist = 0.0;
    double final_loss = 0.0;
};

// Trains every requested variant on the same seed and corpus and scores it
// on the same examples.
inline std::vector<AblationRow> run_ablation(const RunConfig& rc, Workbench& wb,
                                             const std::vector<AblationVariant>& variants) {
    std::vector<AblationRow> rows;
    for (AblationVariant v : variants) {
        RunConfig vrc = rc;
        vrc.variant = variant_name(v);
        TrainState state = make_train_state(vrc.model_config(wb.vocab.size()), vrc.seed, vrc.lr);
        TrainOptions opts;
        opts.epochs = vrc.epochs;
        opts.batch_size = vrc.batch_size;
        auto records = train_loop(state, wb.items, wb.store, wb.vocab, opts);
        EvalReport report = evaluate(state.model, wb.items, wb.store, wb.vocab, vrc.max_len);
        AblationRow row;
        row.variant = vrc.variant;
        row.parameter_count = state.model.parameter_count();
        row.bleu = report.bleu;
        row.nist = report.nist;
        row.final_loss = records.empty() ? 0.0 : records.back().mean_loss;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::ordered_json ablation_json(const RunConfig& rc, const std::vector<AblationRow>& rows) {
    nlohmann::ordered_json j;
    j["config"] = config_json(rc);
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json r;
        r["variant"] = row.variant;
        r["parameters"] = row.parameter_count;
        nlohmann::ordered_json b;
        for (std::size_t n = 1; n <= 4; ++n) b[std::to_string(n)] = row.bleu[n - 1];
        r["bleu"] = b;
        r["nist"] = row.nist;
        r["final_loss"] = row.final_loss;
        out.push_back(r);
    }
    j["rows"] = out;
    return j;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant            params   BLEU-1  BLEU-2  BLEU-3  BLEU-4    NIST    loss\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %7zu  %6.4f  %6.4f  %6.4f  %6.4f  %6.4f  %6.4f\n",
                      row.variant.c_str(), row.parameter_count, row.bleu[0], row.bleu[1], row.bleu[2],
                      row.bleu[3], row.nist, row.final_loss);
        out << buf;
    }
    return out.str();
}

struct SweepPoint {
    std::size_t fusion_layer = 0;
    double bleu4 = 0.0;
    double nist = 0.0;
    double final_loss = 0.0;
};

// Trains one model per fusion depth with a shared seed and reports the
// metric curve.
inline std::vector<SweepPoint> run_fusion_sweep(const RunConfig& rc, Workbench& wb, std::size_t from,
                                                std::size_t to) {
    if (from < 1 || to > rc.layers || from > to)
        throw Error(ErrorCategory::config, "sweep range must satisfy 1 <= from <= to <= layers");
    std::vector<SweepPoint> points;
    for (std::size_t l = from; l <= to; ++l) {
        RunConfig src = rc;
        src.fusion_layer = l;
        TrainState state = make_train_state(src.model_config(wb.vocab.size()), src.seed, src.lr);
        TrainOptions opts;
        opts.epochs = src.epochs;
        opts.batch_size = src.batch_size;
        auto records = train_loop(state, wb.items, wb.store, wb.vocab, opts);
        EvalReport report = evaluate(state.model, wb.items, wb.store, wb.vocab, src.max_len);
        SweepPoint p;
        p.fusion_layer = l;
        p.bleu4 = report.bleu[3];
        p.nist = report.nist;
        p.final_loss = records.empty() ? 0.0 : records.back().mean_loss;
        points.push_back(p);
    }
    return points;
}

inline nlohmann::ordered_json sweep_json(const RunConfig& rc, const std::vector<SweepPoint>& points) {
    nlohmann::ordered_json j;
    j["config"] = config_json(rc);
    nlohmann::ordered_json series = nlohmann::ordered_json::array();
    for (const auto& p : points) {
        nlohmann::ordered_json e;
        e["fusion_layer"] = p.fusion_layer;
        e["bleu4"] = p.bleu4;
        e["nist"] = p.nist;
        e["final_loss"] = p.final_loss;
        series.push_back(e);
    }
    j["series"] = series;
    return j;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
    std::ostringstream out;
    out << "fusion_layer,bleu4,nist,final_loss\n";
    out.precision(17);
    for (const auto& p : points)
        out << p.fusion_layer << "," << p.bleu4 << "," << p.nist << "," << p.final_loss << "\n";
    return out.str();
}

inline std::vector<SweepPoint> parse_sweep_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "fusion_layer,bleu4,nist,final_loss")
        throw Error(ErrorCategory::parse, "sweep csv: bad header");
    std::vector<SweepPoint> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        SweepPoint p;
        if (!std::getline(row, cell, ',')) throw Error(ErrorCategory::parse, "sweep csv: bad row");
        p.fusion_layer = static_cast<std::size_t>(std::stoull(cell));
        if (!std::getline(row, cell, ',')) throw Error(ErrorCategory::parse, "sweep csv: bad row");
        p.bleu4 = std::stod(cell);
        if (!std::getline(row, cell, ',')) throw Error(ErrorCategory::parse, "sweep csv: bad row");
        p.nist = std::stod(cell);
        if (!std::getline(row, cell, ',')) throw Error(ErrorCategory::parse, "sweep csv: bad row");
        p.final_loss = std::stod(cell);
        points.push_back(p);
    }
    return points;
}

}  // namespace dkmd

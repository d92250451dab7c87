// Command-line surface: thin orchestration over the library modules. Every
// command reads an optional flat config file plus flag overrides, validates
// before doing heavy work, and writes artifacts only under --out.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "dkmd/harness.hpp"

namespace {

int exit_code_for(dkmd::ErrorCategory c) {
    using EC = dkmd::ErrorCategory;
    switch (c) {
        case EC::config: return 2;
        case EC::io: return 3;
        case EC::parse: return 4;
        case EC::schema: return 5;
        case EC::invariant: return 6;
        case EC::reference: return 7;
        case EC::shape: return 8;
        case EC::numeric: return 9;
        case EC::state: return 10;
    }
    return 1;
}

struct FlagOverrides {
    std::optional<std::string> corpus, kb, features, vocab, checkpoint, out, variant;
    std::optional<std::size_t> dim, layers, heads, ffn_dim, max_positions, image_dim, k, fusion_layer;
    std::optional<std::size_t> epochs, batch_size, window, min_freq, max_len;
    std::optional<std::uint64_t> seed, checkpoint_every;
    std::optional<double> lr;
};

void add_common_flags(CLI::App* cmd, std::string& config_path, FlagOverrides& f) {
    cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--corpus", f.corpus, "dialog corpus JSON");
    cmd->add_option("--kb", f.kb, "knowledge base JSON");
    cmd->add_option("--features", f.features, "image feature JSON");
    cmd->add_option("--vocab", f.vocab, "vocabulary file");
    cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--dim", f.dim, "model width D");
    cmd->add_option("--layers", f.layers, "encoder/decoder layer count L");
    cmd->add_option("--heads", f.heads, "attention head count H");
    cmd->add_option("--ffn-dim", f.ffn_dim, "feed-forward width (default 4*D)");
    cmd->add_option("--max-positions", f.max_positions, "positional table size");
    cmd->add_option("--image-dim", f.image_dim, "image feature width D_v");
    cmd->add_option("--k", f.k, "vision retrieval depth");
    cmd->add_option("--fusion-layer", f.fusion_layer, "encoder depth of the fusion block");
    cmd->add_option("--variant", f.variant, "model variant name");
    cmd->add_option("--lr", f.lr, "learning rate");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch-size", f.batch_size, "examples per optimizer step");
    cmd->add_option("--seed", f.seed, "RNG seed");
    cmd->add_option("--checkpoint-every", f.checkpoint_every, "epochs between checkpoints (0: end only)");
    cmd->add_option("--window", f.window, "context window in turns");
    cmd->add_option("--min-freq", f.min_freq, "vocabulary frequency threshold");
    cmd->add_option("--max-len", f.max_len, "generation length cap");
}

dkmd::RunConfig resolve_config(const std::string& config_path, const FlagOverrides& f) {
    dkmd::RunConfig rc;
    if (!config_path.empty()) rc = dkmd::load_run_config(config_path);
    auto set_str = [](std::optional<std::string> v, std::string& dst) { if (v) dst = *v; };
    set_str(f.corpus, rc.corpus);
    set_str(f.kb, rc.kb);
    set_str(f.features, rc.features);
    set_str(f.vocab, rc.vocab);
    set_str(f.checkpoint, rc.checkpoint);
    set_str(f.out, rc.out);
    set_str(f.variant, rc.variant);
    if (f.dim) rc.dim = *f.dim;
    if (f.layers) rc.layers = *f.layers;
    if (f.heads) rc.heads = *f.heads;
    if (f.ffn_dim) rc.ffn_dim = *f.ffn_dim;
    if (f.max_positions) rc.max_positions = *f.max_positions;
    if (f.image_dim) rc.image_dim = *f.image_dim;
    if (f.k) rc.k = *f.k;
    if (f.fusion_layer) rc.fusion_layer = *f.fusion_layer;
    if (f.lr) rc.lr = *f.lr;
    if (f.epochs) rc.epochs = *f.epochs;
    if (f.batch_size) rc.batch_size = *f.batch_size;
    if (f.seed) rc.seed = *f.seed;
    if (f.checkpoint_every) rc.checkpoint_every = *f.checkpoint_every;
    if (f.window) rc.window = *f.window;
    if (f.min_freq) rc.min_freq = *f.min_freq;
    if (f.max_len) rc.max_len = *f.max_len;
    if (rc.k == 0) throw dkmd::Error(dkmd::ErrorCategory::config, "k must be >= 1");
    return rc;
}

dkmd::Model model_from_checkpoint(const dkmd::RunConfig& rc, const dkmd::Workbench& wb) {
    dkmd::require_readable(rc.checkpoint, "checkpoint");
    dkmd::TrainState state = dkmd::load_checkpoint(rc.checkpoint);
    if (state.model.config.vocab_size != wb.vocab.size())
        throw dkmd::Error(dkmd::ErrorCategory::invariant,
                          "checkpoint vocabulary size does not match the vocabulary file");
    if (state.model.config.image_dim != wb.store.dim())
        throw dkmd::Error(dkmd::ErrorCategory::invariant,
                          "checkpoint image_dim does not match the feature store");
    return std::move(state.model);
}

// Checkpoints fix the model shape; keep the echoed config consistent.
void adopt_model_config(dkmd::RunConfig& rc, const dkmd::ModelConfig& c) {
    rc.dim = c.dim;
    rc.layers = c.layers;
    rc.heads = c.heads;
    rc.ffn_dim = c.ffn_dim;
    rc.max_positions = c.max_positions;
    rc.image_dim = c.image_dim;
    rc.k = c.retrieval_k;
    rc.fusion_layer = c.fusion_layer;
    rc.variant = dkmd::variant_name(c.variant);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-grounded multimodal dialog response generation"};
    app.require_subcommand(1);

    std::string config_path;
    FlagOverrides flags;
    bool resume = false;
    bool dump_attention = false;
    bool dump_fusion = false;
    bool smooth_bleu = false;
    std::vector<std::string> variant_list;
    std::size_t sweep_from = 1;
    std::size_t sweep_to = 0;

    auto* build_vocab = app.add_subcommand("build-vocab", "build a vocabulary from corpus + KB");
    auto* select = app.add_subcommand("select-knowledge", "dump per-example knowledge selection");
    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    auto* generate = app.add_subcommand("generate", "greedy-generate responses from a checkpoint");
    auto* evaluate = app.add_subcommand("evaluate", "score generations against gold responses");
    auto* ablate = app.add_subcommand("ablate", "train and score model variants side by side");
    auto* sweep = app.add_subcommand("sweep-fusion-layer", "metric curve over fusion depths");

    for (CLI::App* cmd : {build_vocab, select, train, generate, evaluate, ablate, sweep})
        add_common_flags(cmd, config_path, flags);
    train->add_flag("--resume", resume, "resume from --checkpoint");
    generate->add_flag("--dump-attention", dump_attention, "include per-step knowledge attention");
    generate->add_flag("--dump-fusion", dump_fusion, "include fusion confidence diagnostics");
    evaluate->add_flag("--smooth-bleu", smooth_bleu, "+1 smoothing (diagnostics only)");
    ablate->add_option("--variants", variant_list, "variant names (default: all)");
    sweep->add_option("--from", sweep_from, "first fusion layer");
    sweep->add_option("--to", sweep_to, "last fusion layer (default: L)");

    CLI11_PARSE(app, argc, argv);

    try {
        dkmd::RunConfig rc = resolve_config(config_path, flags);

        if (build_vocab->parsed()) {
            const std::string path = dkmd::cmd_build_vocab(rc);
            std::cout << "wrote " << path << "\n";
            return 0;
        }

        if (select->parsed()) {
            dkmd::Workbench wb = dkmd::load_workbench(rc);
            const auto j = dkmd::selection_json(rc, wb);
            const std::string path =
                (std::filesystem::path(rc.out) / "selection.json").string();
            dkmd::write_json_file(path, j);
            std::cout << "wrote " << path << "\n";
            return 0;
        }

        if (train->parsed()) {
            dkmd::Workbench wb = dkmd::load_workbench(rc);
            auto result = dkmd::cmd_train(rc, wb, resume);
            std::cout << "trained " << result.records.size() << " epochs";
            if (!result.records.empty())
                std::cout << ", final mean loss " << result.records.back().mean_loss;
            std::cout << "\nwrote " << result.checkpoint_path << "\n";
            return 0;
        }

        if (generate->parsed()) {
            dkmd::Workbench wb = dkmd::load_workbench(rc);
            dkmd::Model model = model_from_checkpoint(rc, wb);
            adopt_model_config(rc, model.config);
            const auto j = dkmd::generation_json(rc, wb, model, dump_attention, dump_fusion);
            const std::string path =
                (std::filesystem::path(rc.out) / "generations.json").string();
            dkmd::write_json_file(path, j);
            for (const auto& g : j.at("generations"))
                std::cout << g.at("id").get<std::string>() << "\t" << g.at("text").get<std::string>()
                          << "\n";
            std::cout << "wrote " << path << "\n";
            return 0;
        }

        if (evaluate->parsed()) {
            dkmd::Workbench wb = dkmd::load_workbench(rc);
            dkmd::Model model = model_from_checkpoint(rc, wb);
            adopt_model_config(rc, model.config);
            dkmd::EvalReport report =
                dkmd::evaluate(model, wb.items, wb.store, wb.vocab, rc.max_len, smooth_bleu);
            const auto j = dkmd::report_json(rc, report);
            const std::string path = (std::filesystem::path(rc.out) / "report.json").string();
            dkmd::write_json_file(path, j);
            std::cout << "examples " << report.n_examples;
            for (std::size_t n = 1; n <= 4; ++n) std::cout << "  BLEU-" << n << " " << report.bleu[n - 1];
            std::cout << "  NIST " << report.nist << "\nwrote " << path << "\n";
            return 0;
        }

        if (ablate->parsed()) {
            dkmd::Workbench wb = dkmd::load_workbench(rc);
            std::vector<dkmd::AblationVariant> variants;
            if (variant_list.empty())
                variants.assign(dkmd::kAllVariants.begin(), dkmd::kAllVariants.end());
            else
                for (const auto& name : variant_list) variants.push_back(dkmd::parse_variant(name));
            const auto rows = dkmd::run_ablation(rc, wb, variants);
            const std::string path = (std::filesystem::path(rc.out) / "ablation.json").string();
            dkmd::write_json_file(path, dkmd::ablation_json(rc, rows));
            std::cout << dkmd::ablation_table(rows) << "wrote " << path << "\n";
            return 0;
        }

        if (sweep->parsed()) {
            dkmd::Workbench wb = dkmd::load_workbench(rc);
            if (sweep_to == 0) sweep_to = rc.layers;
            const auto points = dkmd::run_fusion_sweep(rc, wb, sweep_from, sweep_to);
            std::filesystem::create_directories(rc.out);
            const std::string json_path = (std::filesystem::path(rc.out) / "sweep.json").string();
            const std::string csv_path = (std::filesystem::path(rc.out) / "sweep.csv").string();
            dkmd::write_json_file(json_path, dkmd::sweep_json(rc, points));
            {
                std::ofstream csv(csv_path);
                if (!csv) throw dkmd::Error(dkmd::ErrorCategory::io, "cannot write " + csv_path);
                csv << dkmd::sweep_csv(points);
            }
            for (const auto& p : points)
                std::cout << "fusion_layer " << p.fusion_layer << "  BLEU-4 " << p.bleu4 << "  NIST "
                          << p.nist << "\n";
            std::cout << "wrote " << json_path << " and " << csv_path << "\n";
            return 0;
        }
    } catch (const dkmd::Error& e) {
        std::cerr << "error [" << dkmd::category_name(e.category()) << "] " << e.what() << "\n";
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        std::cerr << "error " << e.what() << "\n";
        return 1;
    }
    return 0;
}

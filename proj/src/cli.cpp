#include "flowlab/cli.hpp"

#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "flowlab/bench.hpp"
#include "flowlab/textio.hpp"

namespace flowlab {

namespace {

/// Experiment flags shared by reconstruct, edit, sweep and ablate. Flags
/// given on the command line override values from --config.
struct ExperimentFlags {
    std::string config_path;
    std::string backend;
    std::string checkpoint;
    std::string model;
    std::string method;
    std::string correction;
    std::string out;
    int steps = 0;
    double n_max_fraction = 0.0;
    int c_src = 0;
    int c_tar = 0;
    int sources = 0;
    std::vector<uint64_t> seeds;
    double omega1 = 0.0;
    double omega2 = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double eta = 0.0;
    bool second_eta = false;
    double t_floor = 0.0;
    std::vector<double> omega2_list;

    CLI::App* sub = nullptr;

    void attach(CLI::App* app, const std::string& default_out) {
        sub = app;
        out = default_out;
        app->add_option("--config", config_path, "Config file (key = value sections)");
        app->add_option("--backend", backend, "oracle or learned");
        app->add_option("--checkpoint", checkpoint, "Checkpoint file for the learned backend");
        app->add_option("--model", model, "Model description file (built-in default if omitted)");
        app->add_option("--method", method, "flowedit or cvc");
        app->add_option("--steps", steps, "Number of time steps");
        app->add_option("--n-max-fraction", n_max_fraction, "Fraction of steps to walk (0, 1]");
        app->add_option("--c-src", c_src, "Source class id");
        app->add_option("--c-tar", c_tar, "Target class id");
        app->add_option("--sources", sources, "Source samples per seed");
        app->add_option("--seed", seeds, "Seed (repeatable)");
        app->add_option("--out", out, "Output directory");
        app->add_option("--omega1", omega1, "Source guidance scale");
        app->add_option("--omega2", omega2, "Target guidance scale");
        app->add_option("--alpha", alpha, "Structure-branch weight");
        app->add_option("--beta", beta, "Semantic-branch weight");
        app->add_option("--eta", eta, "Correction strength");
        app->add_option("--correction", correction, "off, literal or tweedie_residual");
        app->add_flag("--second-eta", second_eta, "Scale the Euler update by eta as well");
        app->add_option("--t-floor", t_floor, "Smallest t the residual correction divides by");
        app->add_option("--omega2-list", omega2_list, "Sweep values for omega2 (repeatable)");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (sub->count("--config")) cfg = load_config(config_path);
        if (sub->count("--backend")) cfg.backend = backend_from_string(backend);
        if (sub->count("--checkpoint")) cfg.checkpoint_path = checkpoint;
        if (sub->count("--model")) cfg.model_path = model;
        if (sub->count("--method")) cfg.method = method_from_string(method);
        if (sub->count("--steps")) cfg.n_steps = steps;
        if (sub->count("--n-max-fraction")) cfg.n_max_fraction = n_max_fraction;
        if (sub->count("--c-src")) cfg.c_src = c_src;
        if (sub->count("--c-tar")) cfg.c_tar = c_tar;
        if (sub->count("--sources")) cfg.n_sources = sources;
        if (sub->count("--seed")) cfg.seeds = seeds;
        if (sub->count("--out")) cfg.out_dir = out;
        else cfg.out_dir = out;
        if (sub->count("--omega1")) cfg.guidance.omega1 = omega1;
        if (sub->count("--omega2")) cfg.guidance.omega2 = omega2;
        if (sub->count("--alpha")) cfg.cvc.alpha = alpha;
        if (sub->count("--beta")) cfg.cvc.beta = beta;
        if (sub->count("--eta")) cfg.cvc.eta = eta;
        if (sub->count("--correction")) cfg.cvc.correction_mode = correction_mode_from_string(correction);
        if (sub->count("--second-eta")) cfg.cvc.second_eta_in_update = second_eta;
        if (sub->count("--t-floor")) cfg.cvc.t_floor = t_floor;
        if (sub->count("--omega2-list")) cfg.sweep_omega2 = omega2_list;
        // Flag-only learned runs skip the earliest steps by default; config
        // files always carry an explicit value.
        if (cfg.backend == Backend::learned && !sub->count("--n-max-fraction") &&
            !sub->count("--config")) {
            cfg.n_max_fraction = 0.9;
        }
        return cfg;
    }
};

struct TrainFlags {
    std::string config_path;
    std::string model;
    std::string out = "out/train";
    double learning_rate = 0.0;
    int batch_size = 0;
    int epochs = 0;
    int steps_per_epoch = 0;
    double p_drop = 0.0;
    uint64_t seed = 0;
    std::vector<int> hidden;

    CLI::App* sub = nullptr;

    void attach(CLI::App* app) {
        sub = app;
        app->add_option("--config", config_path, "Config file (uses its [train] section)");
        app->add_option("--model", model, "Model description file (built-in default if omitted)");
        app->add_option("--out", out, "Output directory");
        app->add_option("--lr", learning_rate, "SGD learning rate");
        app->add_option("--batch", batch_size, "Batch size");
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--steps-per-epoch", steps_per_epoch, "SGD steps per epoch");
        app->add_option("--p-drop", p_drop, "Condition dropout probability");
        app->add_option("--seed", seed, "Training seed");
        app->add_option("--hidden", hidden, "Hidden layer widths (repeatable)");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (sub->count("--config")) cfg = load_config(config_path);
        if (sub->count("--model")) cfg.model_path = model;
        cfg.out_dir = out;
        if (sub->count("--lr")) cfg.train.learning_rate = learning_rate;
        if (sub->count("--batch")) cfg.train.batch_size = batch_size;
        if (sub->count("--epochs")) cfg.train.epochs = epochs;
        if (sub->count("--steps-per-epoch")) cfg.train.steps_per_epoch = steps_per_epoch;
        if (sub->count("--p-drop")) cfg.train.p_drop = p_drop;
        if (sub->count("--seed")) cfg.train.seed = seed;
        if (sub->count("--hidden")) cfg.hidden_widths = hidden;
        return cfg;
    }
};

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"Flow-matching editing laboratory: exact-model and learned-model experiments"};
    app.set_version_flag("--version", "flowlab 0.1.0");
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write a dataset family's model and samples");
    DatasetSpec spec;
    uint64_t gen_seed = 1;
    std::string gen_out = "out/dataset";
    gen->add_option("--family", spec.family, "symmetric-2gmm or ring-kgmm");
    gen->add_option("--d", spec.d, "Data dimension");
    gen->add_option("--sep", spec.sep, "Mean separation (symmetric-2gmm)");
    gen->add_option("--sigma", spec.sigma, "Component standard deviation");
    gen->add_option("--k", spec.k, "Number of conditions (ring-kgmm)");
    gen->add_option("--radius", spec.radius, "Ring radius (ring-kgmm)");
    gen->add_option("--samples", spec.samples_per_condition, "Samples per condition");
    gen->add_option("--seed", gen_seed, "Sampling seed");
    gen->add_option("--out", gen_out, "Output directory");

    auto* train_cmd = app.add_subcommand("train", "Train a velocity network on a model");
    TrainFlags train_flags;
    train_flags.attach(train_cmd);

    auto* rec = app.add_subcommand("reconstruct",
                                   "Run the editing method with target = source class");
    ExperimentFlags rec_flags;
    rec_flags.attach(rec, "out/reconstruct");

    auto* edit = app.add_subcommand("edit", "Run the editing method across two classes");
    ExperimentFlags edit_flags;
    edit_flags.attach(edit, "out/edit");

    auto* sweep = app.add_subcommand("sweep",
                                     "Sweep omega2 in the baseline reconstruction setting");
    ExperimentFlags sweep_flags;
    sweep_flags.attach(sweep, "out/sweep");

    auto* ablate = app.add_subcommand("ablate",
                                      "Compare flowedit, cvc-no-correction and cvc-full");
    ExperimentFlags ablate_flags;
    ablate_flags.attach(ablate, "out/ablate");

    auto* report = app.add_subcommand("report", "Merge metrics.csv files under a directory");
    std::string report_root;
    std::string report_out;
    report->add_option("--root", report_root, "Directory tree to scan")->required();
    report->add_option("--out", report_out, "Merged CSV path (default <root>/merged_metrics.csv)");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            gen_dataset(spec, gen_seed, gen_out);
            std::cout << "wrote dataset to " << gen_out << "\n";
        } else if (train_cmd->parsed()) {
            const ExperimentConfig cfg = train_flags.resolve();
            const TrainResult tr = run_training(cfg);
            std::cout << "trained " << cfg.train.epochs << " epochs, final loss "
                      << g17(tr.epoch_loss.back()) << ", checkpoint in " << cfg.out_dir << "\n";
        } else if (rec->parsed()) {
            const ExperimentConfig cfg = rec_flags.resolve();
            const ReconstructionResult r = run_reconstruction(cfg);
            std::cout << "reconstruct: " << r.rows.size() << " runs, mean final mse "
                      << g17(r.mean_curve.mean_mse.back()) << ", outputs in " << cfg.out_dir
                      << "\n";
        } else if (edit->parsed()) {
            const ExperimentConfig cfg = edit_flags.resolve();
            const auto rows = run_edit(cfg);
            double sem = 0.0;
            for (const auto& row : rows) sem += row.semantic_score;
            std::cout << "edit: " << rows.size() << " runs, mean semantic score "
                      << g17(rows.empty() ? 0.0 : sem / rows.size()) << ", outputs in "
                      << cfg.out_dir << "\n";
        } else if (sweep->parsed()) {
            const ExperimentConfig cfg = sweep_flags.resolve();
            const auto table = run_guidance_sweep(cfg);
            std::cout << "sweep: " << table.size() << " omega2 values, outputs in " << cfg.out_dir
                      << "\n";
        } else if (ablate->parsed()) {
            const ExperimentConfig cfg = ablate_flags.resolve();
            const auto table = run_ablation(cfg);
            for (const auto& row : table) {
                std::cout << row.variant << ": mean final mse " << g17(row.mean_final_mse) << "\n";
            }
        } else if (report->parsed()) {
            const auto rows = merge_reports(report_root);
            const std::string out_path =
                report->count("--out") ? report_out : report_root + "/merged_metrics.csv";
            std::ostringstream ss;
            write_metrics_csv(rows, ss);
            atomic_write_file(out_path, ss.str());
            std::cout << "merged " << rows.size() << " rows into " << out_path << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int cli_main(int argc, const char* const* argv) {
    std::vector<std::string> args;
    args.reserve(static_cast<size_t>(argc > 0 ? argc - 1 : 0));
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args);
}

}  // namespace flowlab

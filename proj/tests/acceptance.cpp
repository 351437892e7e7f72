// Acceptance gate: one line per claimed numerical property, run against the
// real library through the same entry points the CLI uses. Exit code 0 only
// if every gated claim holds at its stated tolerance.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "flowlab/bench.hpp"
#include "flowlab/editors.hpp"
#include "flowlab/nnvf.hpp"
#include "flowlab/oracle.hpp"
#include "flowlab/rng.hpp"

using namespace flowlab;
namespace fs = std::filesystem;

namespace {

constexpr const char* kWorkDir = "acceptance_work";

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string strf(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return buf;
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

GmmConditionalModel standard_model() { return make_family_model(DatasetSpec{}); }

Condition pick_condition(int i) {
    return i % 3 == 2 ? Condition::null() : Condition::class_id(i % 3);
}

// ---------------------------------------------------------------------------
// 1. One-step denoising identity: x0_hat = z - t*v equals the exact posterior
//    mean for every mixture condition, within 1e-9, in under a second.
Outcome c1_posterior_identity() {
    const double t0 = now_ms();
    const GmmConditionalModel model = standard_model();
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Vec z = scale(rng.gaussian_vec(2), 3.0);
        const double t = rng.uniform();
        const Condition c = pick_condition(i);
        const Vec v = model.oracle_velocity(z, t, c);
        const Vec xhat = tweedie_denoise(z, t, v);
        worst = std::max(worst, max_abs_diff(xhat, model.posterior_mean_x0(z, t, c)));
    }
    const double ms = now_ms() - t0;
    Outcome out;
    out.pass = worst <= 1e-9 && ms < 1000.0;
    out.detail = strf("max |(z - t v) - E[x0|z]| = %.3g over 1000 draws (budget 1e-9), %.1f ms",
                      worst, ms);
    return out;
}

// ---------------------------------------------------------------------------
// 2. Matched guidance scales cancel the unconditional term exactly on the
//    coupled trajectories; unmatched scales leave (omega1-omega2)*e_null.
Outcome c2_unconditional_cancellation() {
    const GmmConditionalModel model = standard_model();
    const OracleField field(model);
    const Condition c0 = Condition::class_id(0);
    Rng rng(202);

    double worst_matched = 0.0;
    double worst_identity = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Vec z = scale(rng.gaussian_vec(2), 2.0);
        const double t = rng.uniform();
        const double omega = 4.0 * rng.uniform();
        const VelocityBreakdown matched =
            flowedit_delta(field, z, z, t, c0, c0, GuidanceParams{omega, omega});
        worst_matched = std::max(worst_matched, norm(matched.unconditional_term));

        const VelocityBreakdown skew =
            flowedit_delta(field, z, z, t, c0, c0, GuidanceParams{1.0, 2.0});
        const Vec e_null = field.eval(z, t, Condition::null());
        const Vec expected = scale(e_null, 1.0 - 2.0);
        worst_identity = std::max(worst_identity,
                                  max_abs_diff(skew.unconditional_term, expected) /
                                      (1.0 + norm(e_null)));
    }

    // Whole-run form: the coupled reconstruction never accumulates any
    // unconditional displacement under matched scales.
    const Vec x_src = model.sample_data(c0, 1, 7)[0];
    const EditReport rep = flowedit_run(field, x_src, c0, c0, GuidanceParams{1.5, 1.5},
                                        TimeGrid::uniform(50), 5);
    double worst_run = norm(rep.x2_delta);
    for (const auto& s : rep.steps) worst_run = std::max(worst_run, s.uncond_norm);

    Outcome out;
    out.pass = worst_matched <= 1e-12 && worst_run <= 1e-12 && worst_identity <= 1e-12;
    out.detail = strf("matched-scale term max %.3g, run accumulation max %.3g, "
                      "(omega1-omega2)*e_null identity max rel %.3g (budget 1e-12)",
                      worst_matched, worst_run, worst_identity);
    return out;
}

// ---------------------------------------------------------------------------
// 3. Exact-model reconstruction: the corrected editor holds the source at
//    machine precision across seeds and step counts; the baseline with
//    unmatched scales drifts measurably. Budget 10 s.
Outcome c3_exact_reconstruction(std::string* info_line) {
    const double t0 = now_ms();
    const GmmConditionalModel model = standard_model();
    const OracleField field(model);
    const Condition c0 = Condition::class_id(0);
    const auto sources = model.sample_data(c0, 10, 4242);

    double worst_off = 0.0;
    double worst_tweedie = 0.0;
    double worst_literal = 0.0;
    double flowedit_mean = 0.0;
    int flowedit_count = 0;
    for (int s = 0; s < 10; ++s) {
        const Vec& x_src = sources[static_cast<size_t>(s)];
        for (int n : {10, 28, 50}) {
            const TimeGrid grid = TimeGrid::uniform(n);
            const uint64_t seed = static_cast<uint64_t>(1000 + s * 10 + n);

            CvcParams p;
            p.correction_mode = CorrectionMode::off;
            worst_off = std::max(
                worst_off, cvc_run(field, x_src, c0, c0, p, grid, seed).final_mse_to_src);
            p.correction_mode = CorrectionMode::tweedie_residual;
            worst_tweedie = std::max(
                worst_tweedie, cvc_run(field, x_src, c0, c0, p, grid, seed).final_mse_to_src);
            p.correction_mode = CorrectionMode::literal;
            worst_literal = std::max(
                worst_literal, cvc_run(field, x_src, c0, c0, p, grid, seed).final_mse_to_src);

            flowedit_mean += flowedit_run(field, x_src, c0, c0, GuidanceParams{1.0, 2.0}, grid,
                                          seed)
                                 .final_mse_to_src;
            ++flowedit_count;
        }
    }
    flowedit_mean /= flowedit_count;

    // The displacement-alignment correction stays exact only from a zero
    // source; measured here and reported, not gated.
    CvcParams lit;
    lit.correction_mode = CorrectionMode::literal;
    const double literal_at_zero =
        cvc_run(field, Vec{0.0, 0.0}, c0, c0, lit, TimeGrid::uniform(28), 77).final_mse_to_src;
    *info_line = strf(
        "[info]  literal correction is reported, not gated: its gradient feeds the raw source "
        "into the velocity, so it only reconstructs a zero source exactly (mse %.3g at "
        "x_src = 0, max %.3g elsewhere)",
        literal_at_zero, worst_literal);

    const double ms = now_ms() - t0;
    Outcome out;
    out.pass = worst_off <= 1e-12 && worst_tweedie <= 1e-12 && flowedit_mean > 1e-4 &&
               ms < 10000.0;
    out.detail = strf("corrected editor max mse: off %.3g, tweedie_residual %.3g (budget 1e-12); "
                      "baseline(1,2) mean mse %.3g > 1e-4; 10 seeds x {10,28,50} steps, %.0f ms",
                      worst_off, worst_tweedie, flowedit_mean, ms);
    return out;
}

// ---------------------------------------------------------------------------
// 4. The accumulated unconditional displacement grows strictly with omega2
//    and vanishes at omega2 = omega1 = 1.
Outcome c4_guidance_sweep() {
    ExperimentConfig cfg;
    cfg.kind = ExperimentKind::sweep;
    cfg.guidance.omega1 = 1.0;
    cfg.n_sources = 20;
    cfg.out_dir = std::string(kWorkDir) + "/c4-sweep";
    const auto table = run_guidance_sweep(cfg);

    bool increasing = true;
    std::string values;
    for (size_t i = 0; i < table.size(); ++i) {
        if (i > 0 && !(table[i].x2_norm > table[i - 1].x2_norm)) increasing = false;
        values += strf("%s%.4g", i ? ", " : "", table[i].x2_norm);
    }
    Outcome out;
    out.pass = table.size() == 4 && table[0].x2_norm <= 1e-12 && increasing;
    out.detail = strf("x2 norm at omega2 {1,2,4,8}: %s (zero at 1, strictly increasing)",
                      values.c_str());
    return out;
}

// ---------------------------------------------------------------------------
// Shared trained checkpoint, cached across invocations under a hash of the
// exact training configuration.
std::string cached_checkpoint(double* train_ms) {
    ExperimentConfig cfg;  // default family, default [train] section, 64x64x64
    std::ostringstream key;
    write_config(cfg, key);
    const std::string text = key.str();
    const std::string dir =
        std::string(kWorkDir) + "/train-" + hash_hex(fnv1a64(text.data(), text.size()));
    const std::string path = dir + "/checkpoint.txt";

    *train_ms = 0.0;
    if (fs::exists(path)) {
        try {
            load_checkpoint_file(path);
            return path;
        } catch (const Error&) {
            fs::remove_all(dir);
        }
    }
    const double t0 = now_ms();
    cfg.out_dir = dir;
    run_training(cfg);
    *train_ms = now_ms() - t0;
    return path;
}

// ---------------------------------------------------------------------------
// 5. Learned-model reconstruction drift: the baseline accumulates visible
//    error on a trained network while the corrected editor stays at zero.
//    Budget 5 minutes including training.
Outcome c5_learned_drift(const std::string& checkpoint, double train_ms) {
    const double t0 = now_ms();

    ExperimentConfig base;
    base.backend = Backend::learned;
    base.checkpoint_path = checkpoint;
    base.n_steps = 50;
    base.n_max_fraction = 0.9;
    base.n_sources = 20;
    base.seeds = {1, 2, 3, 4, 5};

    ExperimentConfig fe = base;
    fe.method = Method::flowedit;
    fe.guidance = {1.0, 2.0};
    fe.out_dir = std::string(kWorkDir) + "/c5-flowedit";
    const ReconstructionResult baseline = run_reconstruction(fe);

    ExperimentConfig cv = base;
    cv.method = Method::cvc;
    cv.out_dir = std::string(kWorkDir) + "/c5-cvc";
    const ReconstructionResult corrected = run_reconstruction(cv);

    const auto& fe_curve = baseline.mean_curve.mean_mse;
    const auto& cv_curve = corrected.mean_curve.mean_mse;
    size_t dominated = 0;
    for (size_t i = 0; i < fe_curve.size(); ++i) {
        if (cv_curve[i] <= fe_curve[i]) ++dominated;
    }
    const double frac = static_cast<double>(dominated) / fe_curve.size();
    const double fe_final = fe_curve.back();
    const double cv_final = cv_curve.back();
    const double total_ms = now_ms() - t0 + train_ms;

    Outcome out;
    out.pass = frac >= 0.9 && cv_final <= fe_final && cv_final < 0.5 * fe_final &&
               total_ms < 300000.0;
    out.detail = strf(
        "corrected <= baseline at %zu/%zu states (%.0f%%); final mse %.3g vs %.3g "
        "(< 0.5x required); 100 runs each; train %.1f s%s + runs %.1f s < 300 s",
        dominated, fe_curve.size(), 100.0 * frac, cv_final, fe_final, train_ms / 1000.0,
        train_ms == 0.0 ? " (cached)" : "", (now_ms() - t0) / 1000.0);
    return out;
}

// ---------------------------------------------------------------------------
// 6. Ablation ordering on the learned backend, reconstruction setting:
//    cvc-full <= cvc-no-correction <= flowedit in mean final MSE.
Outcome c6_ablation(const std::string& checkpoint) {
    ExperimentConfig cfg;
    cfg.kind = ExperimentKind::ablate;
    cfg.backend = Backend::learned;
    cfg.checkpoint_path = checkpoint;
    cfg.n_max_fraction = 0.9;
    cfg.n_sources = 20;
    cfg.out_dir = std::string(kWorkDir) + "/c6-ablate";
    const auto table = run_ablation(cfg);

    Outcome out;
    out.pass = table.size() == 3 && table[2].mean_final_mse <= table[1].mean_final_mse &&
               table[1].mean_final_mse <= table[0].mean_final_mse;
    out.detail = strf("mean final mse: cvc-full %.3g <= cvc-no-correction %.3g <= flowedit %.3g",
                      table[2].mean_final_mse, table[1].mean_final_mse, table[0].mean_final_mse);
    return out;
}

// ---------------------------------------------------------------------------
// 7. Analytic gradients agree with central finite differences: the training
//    loss to 1e-5 relative, the alignment gradient to 1e-7.
Outcome c7_gradient_checks() {
    const MlpVelocityNet net = MlpVelocityNet::make(1, 2, {3}, 7);
    TrainBatch batch;
    Rng rng(303);
    for (int i = 0; i < 4; ++i) {
        batch.x0.push_back(rng.gaussian_vec(1));
        batch.noise.push_back(rng.gaussian_vec(1));
        batch.t.push_back(0.1 + 0.8 * rng.uniform());
        batch.c.push_back(pick_condition(i));
    }
    const LossGrad lg = fm_loss(net, batch);
    const double h = 1e-6;
    double worst_net = 0.0;
    auto probe = [&](size_t l, size_t i, bool is_bias) {
        auto nudged = [&](double delta) {
            MlpVelocityNet copy = net;
            (is_bias ? copy.b : copy.w)[l][i] += delta;
            return fm_loss(copy, batch).loss;
        };
        const double fd = (nudged(h) - nudged(-h)) / (2.0 * h);
        const double an = (is_bias ? lg.gb : lg.gw)[l][i];
        worst_net = std::max(worst_net, std::abs(fd - an) / (std::abs(fd) + std::abs(an) + 1e-12));
    };
    for (size_t l = 0; l < net.w.size(); ++l) {
        for (size_t i = 0; i < net.w[l].size(); ++i) probe(l, i, false);
        for (size_t i = 0; i < net.b[l].size(); ++i) probe(l, i, true);
    }

    const Vec v = rng.gaussian_vec(3);
    const Vec g = rng.gaussian_vec(3);
    const double dt = -0.04;
    const AlignmentGrad an = alignment_gradient(v, dt, g);
    double worst_align = 0.0;
    for (size_t j = 0; j < v.size(); ++j) {
        Vec up = v, down = v;
        up[j] += h;
        down[j] -= h;
        const double fd =
            (alignment_gradient(up, dt, g).loss - alignment_gradient(down, dt, g).loss) /
            (2.0 * h);
        worst_align = std::max(worst_align, std::abs(fd - an.gradient[j]) /
                                                (std::abs(fd) + std::abs(an.gradient[j]) + 1e-12));
    }

    Outcome out;
    out.pass = worst_net <= 1e-5 && worst_align <= 1e-7;
    out.detail = strf("training loss max rel err %.3g (budget 1e-5) over all %zu params; "
                      "alignment gradient max rel err %.3g (budget 1e-7)",
                      worst_net, net.param_count(), worst_align);
    return out;
}

// ---------------------------------------------------------------------------
// 8. The walk is first order: doubling the steps on v = z halves the error
//    against the high-order reference flow.
Outcome c8_integrator_order() {
    struct LinearField final : VelocityField {
        int dim() const override { return 1; }
        Vec eval(const Vec& z, double, const Condition&) const override { return z; }
    };
    const LinearField field;
    const Vec z0 = {1.0};
    const Vec truth = integrate_reference(field, z0, TimeGrid::uniform(200), Condition::null(),
                                          Direction::forward)
                          .final_state();
    auto err_at = [&](int n) {
        return std::abs(integrate_euler(field, z0, TimeGrid::uniform(n), Condition::null(),
                                        Direction::forward)
                            .final_state()[0] -
                        truth[0]);
    };
    const double e100 = err_at(100);
    const double e200 = err_at(200);
    const double ratio = e200 / e100;

    Outcome out;
    out.pass = ratio > 0.4 && ratio < 0.6;
    out.detail = strf("final error %.3g at 100 steps, %.3g at 200; ratio %.3f in [0.4, 0.6]",
                      e100, e200, ratio);
    return out;
}

// ---------------------------------------------------------------------------
// 9. Every run kind replays byte-identically from its recorded config. The
//    wall_ms column of metrics.csv is the one excluded field: it measures
//    the machine, not the run.
Outcome c9_replay(const std::string& checkpoint) {
    const std::string work = kWorkDir;

    ExperimentConfig rec;
    rec.n_sources = 4;
    rec.seeds = {1, 2};
    rec.n_steps = 20;
    rec.out_dir = work + "/c9-reconstruct";
    run_reconstruction(rec);

    ExperimentConfig edit;
    edit.kind = ExperimentKind::edit;
    edit.n_sources = 4;
    edit.n_steps = 20;
    edit.out_dir = work + "/c9-edit";
    run_edit(edit);

    ExperimentConfig sweep;
    sweep.kind = ExperimentKind::sweep;
    sweep.guidance.omega1 = 1.0;
    sweep.n_sources = 3;
    sweep.n_steps = 20;
    sweep.out_dir = work + "/c9-sweep";
    run_guidance_sweep(sweep);

    ExperimentConfig ablate;
    ablate.kind = ExperimentKind::ablate;
    ablate.backend = Backend::learned;
    ablate.checkpoint_path = checkpoint;
    ablate.n_steps = 10;
    ablate.n_max_fraction = 0.9;
    ablate.n_sources = 3;
    ablate.out_dir = work + "/c9-ablate";
    run_ablation(ablate);

    int identical = 0;
    std::string failures;
    for (const char* name : {"c9-reconstruct", "c9-edit", "c9-sweep", "c9-ablate"}) {
        const RerunCheck check =
            verify_rerun(work + "/" + name, work + "/" + name + "-replay");
        if (check.identical) {
            ++identical;
        } else {
            failures += strf(" %s:", name);
            for (const auto& m : check.mismatches) failures += " " + m + ";";
        }
    }

    Outcome out;
    out.pass = identical == 4;
    out.detail = strf("%d/4 run kinds byte-identical on replay (metrics.csv wall_ms column "
                      "excluded by design)%s",
                      identical, failures.c_str());
    return out;
}

}  // namespace

int main() {
    fs::create_directories(kWorkDir);
    for (const char* sub :
         {"c4-sweep", "c5-flowedit", "c5-cvc", "c6-ablate", "c9-reconstruct", "c9-edit",
          "c9-sweep", "c9-ablate", "c9-reconstruct-replay", "c9-edit-replay", "c9-sweep-replay",
          "c9-ablate-replay"}) {
        fs::remove_all(std::string(kWorkDir) + "/" + sub);
    }

    std::printf("acceptance gate: exact-model and learned-model editing claims\n");

    double train_ms = 0.0;
    std::string checkpoint;
    std::string train_error;
    try {
        checkpoint = cached_checkpoint(&train_ms);
    } catch (const std::exception& e) {
        train_error = e.what();
    }

    struct Entry {
        const char* name;
        std::function<Outcome()> fn;
    };
    std::string literal_info;
    const std::vector<Entry> entries = {
        {"posterior-mean identity", [&] { return c1_posterior_identity(); }},
        {"unconditional-term cancellation", [&] { return c2_unconditional_cancellation(); }},
        {"exact-model reconstruction", [&] { return c3_exact_reconstruction(&literal_info); }},
        {"guidance-scale displacement sweep", [&] { return c4_guidance_sweep(); }},
        {"learned-model reconstruction drift",
         [&] { return c5_learned_drift(checkpoint, train_ms); }},
        {"ablation ordering", [&] { return c6_ablation(checkpoint); }},
        {"gradient checks", [&] { return c7_gradient_checks(); }},
        {"integrator convergence order", [&] { return c8_integrator_order(); }},
        {"replay byte-identity", [&] { return c9_replay(checkpoint); }},
    };

    int passed = 0;
    for (size_t i = 0; i < entries.size(); ++i) {
        Outcome out;
        const double t0 = now_ms();
        try {
            if (!train_error.empty() && (i == 4 || i == 5 || i == 8)) {
                out.detail = "training unavailable: " + train_error;
            } else {
                out = entries[i].fn();
            }
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double ms = now_ms() - t0;
        std::printf("[%s] %zu %s: %s (%.0f ms)\n", out.pass ? "PASS" : "FAIL", i + 1,
                    entries[i].name, out.detail.c_str(), ms);
        if (i == 2 && !literal_info.empty()) std::printf("%s\n", literal_info.c_str());
        if (out.pass) ++passed;
    }

    std::printf("acceptance: %d/9 criteria passed\n", passed);
    return passed == 9 ? 0 : 1;
}

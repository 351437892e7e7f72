#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowlab/flowcore.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

/// Classifier-free guidance scales for the baseline editor's two trajectories.
struct GuidanceParams {
    double omega1 = 1.5;  // source guidance scale
    double omega2 = 5.5;  // target guidance scale
};

enum class CorrectionMode { off, literal, tweedie_residual };

/// Parameters of the corrected dual-branch editor. alpha weighs the
/// structure branch, beta the semantic branch, eta the one-step correction.
struct CvcParams {
    double alpha = 1.0;
    double beta = 7.0;
    double eta = 0.2;
    CorrectionMode correction_mode = CorrectionMode::tweedie_residual;
    bool second_eta_in_update = false;  // scale the Euler update by eta as well
    double t_floor = 1e-3;              // guards the 1/t factor in tweedie_residual
};

/// Velocity difference split into its two guidance terms; total is the exact
/// elementwise sum of the parts.
struct VelocityBreakdown {
    Vec conditional_term;
    Vec unconditional_term;
    Vec total;
};

/// One executed denoising step of an editing run. Latents and times are
/// those at the step's evaluation point t_i, before the Euler update.
struct EditStepRecord {
    int step = 0;     // grid index i
    double t = 0.0;   // t_i
    Vec z_src;
    Vec z_tar;
    Vec z_edit;
    double mse_to_src = 0.0;        // MSE(z_edit, x_src) at t_i
    double vdelta_norm = 0.0;
    double cond_norm = 0.0;         // baseline: conditional term; cvc: equals vdelta_norm
    double uncond_norm = 0.0;       // baseline: unconditional term; cvc: 0
    double correction_norm = 0.0;   // ||V_new - V_delta||
    bool correction_skipped = false;
};

struct EditReport {
    Vec x_src;
    Vec final;                       // edit latent at the end of the walk (t = 0)
    double final_mse_to_src = 0.0;
    Vec x1_delta;                    // dt-weighted sum of conditional contributions
    Vec x2_delta;                    // dt-weighted sum of unconditional contributions
    uint64_t seed = 0;
    std::vector<EditStepRecord> steps;
    std::vector<double> curve_t;     // state times, t_{n_max} down to t_0
    std::vector<double> curve_mse;   // MSE(state, x_src), one entry per state
};

/// Guided velocity omega*field(z,t,c) + (1-omega)*field(z,t,null). Exactly
/// two field evaluations; omega=1 reproduces the conditional branch exactly
/// and omega=0 the unconditional one.
Vec cfg_velocity(const VelocityField& field, const Vec& z, double t, const Condition& c,
                 double omega);

/// Velocity difference of the baseline editor between the target trajectory
/// (z_tar, c_tar, omega2) and the source trajectory (z_src, c_src, omega1),
/// decomposed into conditional and unconditional terms. Four field
/// evaluations; total = conditional + unconditional bit-exactly.
VelocityBreakdown flowedit_delta(const VelocityField& field, const Vec& z_src, const Vec& z_tar,
                                 double t, const Condition& c_src, const Condition& c_tar,
                                 const GuidanceParams& g);

/// Baseline editing run: edit latent starts at x_src, per step fresh seeded
/// noise builds z_src by interpolation and z_tar by the coupling
/// z_tar = (z_edit - x_src) + z_src, then an Euler update with the velocity
/// difference. Accumulates the dt-weighted conditional and unconditional
/// sums.
EditReport flowedit_run(const VelocityField& field, const Vec& x_src, const Condition& c_src,
                        const Condition& c_tar, const GuidanceParams& g, const TimeGrid& grid,
                        uint64_t seed);

/// Dual-branch velocity difference alpha*(v2-v1) + beta*(v3-v2) with
/// v1 = field(z_src,t,c_src), v2 = field(z_tar,t,c_src),
/// v3 = field(z_tar,t,c_tar). Exactly three field evaluations and no
/// unconditional branch.
struct CvcVelocity {
    Vec v_delta;
    Vec v1;
    Vec v2;
    Vec v3;
};
CvcVelocity cvc_velocity(const VelocityField& field, const Vec& z_src, const Vec& z_tar, double t,
                         const Condition& c_src, const Condition& c_tar, const CvcParams& p);

/// Posterior-mean estimate of the clean state from the interpolant
/// convention z_t = (1-t)*x0 + t*noise with v = noise - x0: x0_hat = z - t*v.
Vec tweedie_denoise(const Vec& z, double t, const Vec& v);

/// Least-squares alignment of the step displacement dt*V_delta with a target
/// g: loss = ||dt*V_delta - g||^2, gradient w.r.t. V_delta in closed form.
struct AlignmentGrad {
    double loss = 0.0;
    Vec gradient;
};
AlignmentGrad alignment_gradient(const Vec& v_delta, double dt, const Vec& g);

/// Step context for the one-step correction of the velocity difference.
struct CorrectionContext {
    double t = 0.0;   // evaluation time t_i
    double dt = 0.0;  // signed step t_{i-1} - t_i
    const Vec* x0_src = nullptr;
    const Vec* z_src = nullptr;
    const Vec* z_tar = nullptr;
    const Vec* z_edit = nullptr;
    const Vec* v1 = nullptr;
    const Vec* v2 = nullptr;
};

/// Applies the selected correction to V_delta.
///   off:             V_new = V_delta
///   literal:         V_new = V_delta - eta * alignment_gradient(V_delta, dt, x0_src).gradient
///   tweedie_residual: r = [x0_hat(z_tar,t,v2) - x0_hat(z_src,t,v1)] - (z_edit - x0_src),
///                    V_new = V_delta - (eta / max(t, t_floor)) * r;
///                    skipped (V_new = V_delta, flag set) when t < t_floor.
struct CorrectionResult {
    Vec v_new;
    bool skipped = false;
};
CorrectionResult velocity_correct(const Vec& v_delta, const CorrectionContext& ctx,
                                  const CvcParams& p);

/// Corrected dual-branch editing run; same walk and coupling as
/// flowedit_run, with cvc_velocity and velocity_correct per step. The Euler
/// update uses dt, additionally scaled by eta when second_eta_in_update is
/// set. x1_delta accumulates the dt-weighted applied velocities; x2_delta
/// stays zero (no unconditional branch exists).
EditReport cvc_run(const VelocityField& field, const Vec& x_src, const Condition& c_src,
                   const Condition& c_tar, const CvcParams& p, const TimeGrid& grid,
                   uint64_t seed);

/// Per-step table `step,t,mse_to_src,vdelta_norm,uncond_norm,cond_norm,correction_norm`.
void write_edit_steps_csv(const EditReport& report, std::ostream& out);

/// State curve `step,t,mse`, one row per visited state from t_{n_max} to 0.
void write_edit_curve_csv(const EditReport& report, std::ostream& out);

}  // namespace flowlab

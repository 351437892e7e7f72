#include "flowlab/editors.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "flowlab/rng.hpp"
#include "flowlab/textio.hpp"

namespace flowlab {

namespace {

void check_field_dim(const VelocityField& field, const Vec& z, const char* what) {
    if (static_cast<int>(z.size()) != field.dim()) {
        throw RejectedInput(std::string(what) + ": latent dimension mismatch");
    }
}

// Shared walk of the two editing runs. step_velocity(record, z_src, z_tar,
// z_edit, t, dt) returns the velocity applied at this step and fills the
// record's norms; update_dt_scale rescales dt inside the Euler update only.
template <typename StepVelocity>
EditReport edit_walk(const VelocityField& field, const Vec& x_src, const TimeGrid& grid,
                     uint64_t seed, double update_dt_scale, StepVelocity&& step_velocity) {
    grid.validate();
    check_field_dim(field, x_src, "edit");
    if (!is_finite(x_src)) throw RejectedInput("edit: non-finite source");

    EditReport report;
    report.x_src = x_src;
    report.seed = seed;
    report.x1_delta.assign(x_src.size(), 0.0);
    report.x2_delta.assign(x_src.size(), 0.0);

    Rng rng(seed);
    Vec z_edit = x_src;
    report.curve_t.push_back(grid.t(grid.n_max));
    report.curve_mse.push_back(mse(z_edit, x_src));

    for (int i = grid.n_max; i >= 1; --i) {
        const double t = grid.t(i);
        const double dt = grid.t(i - 1) - grid.t(i);
        const Vec noise = rng.gaussian_vec(field.dim());
        const Vec z_src = interpolate(x_src, noise, t);
        // Grouping (z_edit - x_src) + z_src keeps the degenerate
        // reconstruction on the source trajectory bit-exactly.
        const Vec z_tar = add(sub(z_edit, x_src), z_src);

        EditStepRecord rec;
        rec.step = i;
        rec.t = t;
        rec.z_src = z_src;
        rec.z_tar = z_tar;
        rec.z_edit = z_edit;
        rec.mse_to_src = mse(z_edit, x_src);

        Vec v_applied;
        try {
            v_applied = step_velocity(rec, z_src, z_tar, z_edit, t, dt, report);
        } catch (const RejectedInput& e) {
            throw IntegrationError(e.what(), i);
        }
        z_edit = euler_step(z_edit, v_applied, update_dt_scale * dt);
        if (!is_finite(z_edit)) throw IntegrationError("edit: non-finite state", i);

        report.steps.push_back(std::move(rec));
        report.curve_t.push_back(grid.t(i - 1));
        report.curve_mse.push_back(mse(z_edit, x_src));
    }

    report.final = z_edit;
    report.final_mse_to_src = mse(z_edit, x_src);
    return report;
}

}  // namespace

Vec cfg_velocity(const VelocityField& field, const Vec& z, double t, const Condition& c,
                 double omega) {
    check_field_dim(field, z, "cfg_velocity");
    if (!std::isfinite(omega)) throw RejectedInput("cfg_velocity: omega must be finite");
    const Vec e_c = field.eval(z, t, c);
    const Vec e_null = field.eval(z, t, Condition::null());
    // omega*e_c + (1-omega)*e_null; at omega 0 and 1 the unused branch drops
    // out exactly.
    Vec v(z.size());
    const double w0 = 1.0 - omega;
    for (size_t j = 0; j < z.size(); ++j) v[j] = omega * e_c[j] + w0 * e_null[j];
    return v;
}

VelocityBreakdown flowedit_delta(const VelocityField& field, const Vec& z_src, const Vec& z_tar,
                                 double t, const Condition& c_src, const Condition& c_tar,
                                 const GuidanceParams& g) {
    require_same_dim(z_src, z_tar, "flowedit_delta");
    check_field_dim(field, z_src, "flowedit_delta");
    if (!std::isfinite(g.omega1) || !std::isfinite(g.omega2)) {
        throw RejectedInput("flowedit_delta: guidance scales must be finite");
    }

    const Vec e_tar_c = field.eval(z_tar, t, c_tar);
    const Vec e_src_c = field.eval(z_src, t, c_src);
    const Vec e_tar_0 = field.eval(z_tar, t, Condition::null());
    const Vec e_src_0 = field.eval(z_src, t, Condition::null());

    VelocityBreakdown out;
    out.conditional_term.resize(z_src.size());
    out.unconditional_term.resize(z_src.size());
    const double a_tar = 1.0 - g.omega2;
    const double a_src = 1.0 - g.omega1;
    for (size_t j = 0; j < z_src.size(); ++j) {
        out.conditional_term[j] = g.omega2 * e_tar_c[j] - g.omega1 * e_src_c[j];
        out.unconditional_term[j] = a_tar * e_tar_0[j] - a_src * e_src_0[j];
    }
    out.total = add(out.conditional_term, out.unconditional_term);
    return out;
}

EditReport flowedit_run(const VelocityField& field, const Vec& x_src, const Condition& c_src,
                        const Condition& c_tar, const GuidanceParams& g, const TimeGrid& grid,
                        uint64_t seed) {
    return edit_walk(field, x_src, grid, seed, 1.0,
                     [&](EditStepRecord& rec, const Vec& z_src, const Vec& z_tar, const Vec&,
                         double t, double dt, EditReport& report) {
                         VelocityBreakdown d =
                             flowedit_delta(field, z_src, z_tar, t, c_src, c_tar, g);
                         rec.vdelta_norm = norm(d.total);
                         rec.cond_norm = norm(d.conditional_term);
                         rec.uncond_norm = norm(d.unconditional_term);
                         add_scaled_inplace(report.x1_delta, dt, d.conditional_term);
                         add_scaled_inplace(report.x2_delta, dt, d.unconditional_term);
                         return d.total;
                     });
}

CvcVelocity cvc_velocity(const VelocityField& field, const Vec& z_src, const Vec& z_tar, double t,
                         const Condition& c_src, const Condition& c_tar, const CvcParams& p) {
    require_same_dim(z_src, z_tar, "cvc_velocity");
    check_field_dim(field, z_src, "cvc_velocity");
    if (c_src.is_null() || c_tar.is_null()) {
        throw RejectedInput("cvc_velocity: conditions must be class ids, not null");
    }

    CvcVelocity out;
    out.v1 = field.eval(z_src, t, c_src);
    out.v2 = field.eval(z_tar, t, c_src);
    out.v3 = field.eval(z_tar, t, c_tar);
    out.v_delta.resize(z_src.size());
    for (size_t j = 0; j < z_src.size(); ++j) {
        out.v_delta[j] = p.alpha * (out.v2[j] - out.v1[j]) + p.beta * (out.v3[j] - out.v2[j]);
    }
    return out;
}

Vec tweedie_denoise(const Vec& z, double t, const Vec& v) {
    require_same_dim(z, v, "tweedie_denoise");
    if (!(t >= 0.0 && t <= 1.0)) throw RejectedInput("tweedie_denoise: t must be in [0,1]");
    if (t == 0.0) return z;
    return axpy(z, -t, v);
}

AlignmentGrad alignment_gradient(const Vec& v_delta, double dt, const Vec& g) {
    require_same_dim(v_delta, g, "alignment_gradient");
    AlignmentGrad out;
    out.gradient.resize(v_delta.size());
    const double two_dt = 2.0 * dt;
    for (size_t j = 0; j < v_delta.size(); ++j) {
        const double r = dt * v_delta[j] - g[j];
        out.loss += r * r;
        out.gradient[j] = two_dt * r;
    }
    return out;
}

CorrectionResult velocity_correct(const Vec& v_delta, const CorrectionContext& ctx,
                                  const CvcParams& p) {
    CorrectionResult out;
    switch (p.correction_mode) {
        case CorrectionMode::off:
            out.v_new = v_delta;
            return out;
        case CorrectionMode::literal: {
            if (!ctx.x0_src) throw RejectedInput("velocity_correct: literal mode needs x0_src");
            if (ctx.dt == 0.0) throw RejectedInput("velocity_correct: literal mode needs dt != 0");
            const AlignmentGrad ag = alignment_gradient(v_delta, ctx.dt, *ctx.x0_src);
            out.v_new = axpy(v_delta, -p.eta, ag.gradient);
            return out;
        }
        case CorrectionMode::tweedie_residual: {
            if (!ctx.x0_src || !ctx.z_src || !ctx.z_tar || !ctx.z_edit || !ctx.v1 || !ctx.v2) {
                throw RejectedInput("velocity_correct: tweedie_residual mode needs full context");
            }
            if (ctx.t < p.t_floor) {
                out.v_new = v_delta;
                out.skipped = true;
                return out;
            }
            const Vec x0_tar = tweedie_denoise(*ctx.z_tar, ctx.t, *ctx.v2);
            const Vec x0_src_hat = tweedie_denoise(*ctx.z_src, ctx.t, *ctx.v1);
            // Predicted clean-level displacement must match the accumulated
            // edit displacement; the mismatch is the correction residual.
            const Vec r = sub(sub(x0_tar, x0_src_hat), sub(*ctx.z_edit, *ctx.x0_src));
            out.v_new = axpy(v_delta, -p.eta / std::max(ctx.t, p.t_floor), r);
            return out;
        }
    }
    throw RejectedInput("velocity_correct: unknown correction mode");
}

EditReport cvc_run(const VelocityField& field, const Vec& x_src, const Condition& c_src,
                   const Condition& c_tar, const CvcParams& p, const TimeGrid& grid,
                   uint64_t seed) {
    if (!(p.eta > 0.0)) throw RejectedInput("cvc_run: eta must be > 0");
    const double update_scale = p.second_eta_in_update ? p.eta : 1.0;
    return edit_walk(
        field, x_src, grid, seed, update_scale,
        [&](EditStepRecord& rec, const Vec& z_src, const Vec& z_tar, const Vec& z_edit, double t,
            double dt, EditReport& report) {
            CvcVelocity cv = cvc_velocity(field, z_src, z_tar, t, c_src, c_tar, p);

            CorrectionContext ctx;
            ctx.t = t;
            ctx.dt = dt;
            ctx.x0_src = &report.x_src;
            ctx.z_src = &z_src;
            ctx.z_tar = &z_tar;
            ctx.z_edit = &z_edit;
            ctx.v1 = &cv.v1;
            ctx.v2 = &cv.v2;
            CorrectionResult cr = velocity_correct(cv.v_delta, ctx, p);

            rec.vdelta_norm = norm(cv.v_delta);
            rec.cond_norm = rec.vdelta_norm;
            rec.uncond_norm = 0.0;
            rec.correction_norm = norm(sub(cr.v_new, cv.v_delta));
            rec.correction_skipped = cr.skipped;
            add_scaled_inplace(report.x1_delta, update_scale * dt, cr.v_new);
            return cr.v_new;
        });
}

void write_edit_steps_csv(const EditReport& report, std::ostream& out) {
    out << "step,t,mse_to_src,vdelta_norm,uncond_norm,cond_norm,correction_norm\n";
    for (const auto& rec : report.steps) {
        out << rec.step << "," << g17(rec.t) << "," << g17(rec.mse_to_src) << ","
            << g17(rec.vdelta_norm) << "," << g17(rec.uncond_norm) << "," << g17(rec.cond_norm)
            << "," << g17(rec.correction_norm) << "\n";
    }
}

void write_edit_curve_csv(const EditReport& report, std::ostream& out) {
    out << "step,t,mse\n";
    for (size_t i = 0; i < report.curve_t.size(); ++i) {
        out << i << "," << g17(report.curve_t[i]) << "," << g17(report.curve_mse[i]) << "\n";
    }
}

}  // namespace flowlab

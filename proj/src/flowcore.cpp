#include "flowlab/flowcore.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

namespace flowlab {

TimeGrid TimeGrid::uniform(int n_steps, double n_max_fraction) {
    if (n_steps < 1) throw RejectedInput("TimeGrid::uniform: n_steps must be >= 1");
    if (!(n_max_fraction > 0.0 && n_max_fraction <= 1.0)) {
        throw RejectedInput("TimeGrid::uniform: n_max_fraction must be in (0, 1]");
    }
    TimeGrid g;
    g.points.resize(static_cast<size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) {
        g.points[static_cast<size_t>(i)] = static_cast<double>(i) / n_steps;
    }
    g.points.back() = 1.0;
    g.n_max = static_cast<int>(std::lround(n_max_fraction * n_steps));
    if (g.n_max < 1) g.n_max = 1;
    if (g.n_max > n_steps) g.n_max = n_steps;
    return g;
}

void TimeGrid::validate() const {
    if (points.size() < 2) throw RejectedInput("TimeGrid: need at least two points");
    if (points.front() != 0.0) throw RejectedInput("TimeGrid: t_0 must be 0");
    if (n_max < 1 || n_max > n_steps()) throw RejectedInput("TimeGrid: n_max out of range");
    for (size_t i = 0; i < points.size(); ++i) {
        const double t = points[i];
        if (!std::isfinite(t) || t < 0.0 || t > 1.0) {
            throw RejectedInput("TimeGrid: points must be finite and in [0,1]");
        }
        if (i > 0 && !(points[i - 1] < t)) {
            throw RejectedInput("TimeGrid: points must be strictly increasing");
        }
    }
}

Vec interpolate(const Vec& x0, const Vec& noise, double t) {
    require_same_dim(x0, noise, "interpolate");
    if (!(t >= 0.0 && t <= 1.0)) throw RejectedInput("interpolate: t must be in [0,1]");
    const double a = 1.0 - t;
    Vec r(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) r[i] = a * x0[i] + t * noise[i];
    return r;
}

Vec euler_step(const Vec& z, const Vec& v, double dt) {
    require_same_dim(z, v, "euler_step");
    if (!std::isfinite(dt)) throw RejectedInput("euler_step: dt must be finite");
    if (!is_finite(v)) throw RejectedInput("euler_step: non-finite velocity");
    Vec r(z.size());
    for (size_t i = 0; i < z.size(); ++i) r[i] = z[i] + dt * v[i];
    return r;
}

namespace {

// Shared walk over the grid: `advance` maps (z, t_from, t_to) to the next
// state and reports the departure velocity for the trajectory record.
Trajectory integrate_impl(const Vec& z_start, const TimeGrid& grid, Direction direction,
                          const std::function<Vec(const Vec&, double, double, Vec&)>& advance) {
    grid.validate();
    if (!is_finite(z_start)) throw RejectedInput("integrate: non-finite start state");

    const int step_delta = direction == Direction::forward ? 1 : -1;
    const int i_begin = direction == Direction::forward ? 0 : grid.n_max;
    const int i_end = direction == Direction::forward ? grid.n_max : 0;

    Trajectory traj;
    traj.points.reserve(static_cast<size_t>(std::abs(i_end - i_begin)) + 1);

    Vec z = z_start;
    int i = i_begin;
    traj.points.push_back({grid.t(i), z, {}});
    while (i != i_end) {
        const int j = i + step_delta;
        Vec v_used;
        Vec z_next;
        try {
            z_next = advance(z, grid.t(i), grid.t(j), v_used);
        } catch (const RejectedInput& e) {
            throw IntegrationError(e.what(), i);
        }
        if (!is_finite(z_next)) throw IntegrationError("non-finite state", i);
        traj.points.back().v = v_used;
        z = std::move(z_next);
        i = j;
        traj.points.push_back({grid.t(i), z, {}});
    }
    return traj;
}

}  // namespace

Trajectory integrate_euler(const VelocityField& field, const Vec& z_start, const TimeGrid& grid,
                           const Condition& c, Direction direction) {
    return integrate_impl(z_start, grid, direction,
                          [&](const Vec& z, double t_from, double t_to, Vec& v_used) {
                              Vec v = field.eval(z, t_from, c);
                              v_used = v;
                              return euler_step(z, v, t_to - t_from);
                          });
}

Trajectory integrate_reference(const VelocityField& field, const Vec& z_start, const TimeGrid& grid,
                               const Condition& c, Direction direction) {
    constexpr int kRefine = 10;
    auto rk4_span = [&](const Vec& z_in, double t_from, double t_to, Vec& v_used) {
        Vec z = z_in;
        const double h = (t_to - t_from) / kRefine;
        for (int s = 0; s < kRefine; ++s) {
            // Anchor the stage endpoints so accumulated rounding never puts
            // an evaluation outside [t_from, t_to] and the field's domain.
            const double t0 = t_from + s * h;
            const double t1 = s + 1 == kRefine ? t_to : t_from + (s + 1) * h;
            const double hs = t1 - t0;
            const double tm = t0 + 0.5 * hs;
            Vec k1 = field.eval(z, t0, c);
            if (s == 0) v_used = k1;
            Vec k2 = field.eval(axpy(z, 0.5 * hs, k1), tm, c);
            Vec k3 = field.eval(axpy(z, 0.5 * hs, k2), tm, c);
            Vec k4 = field.eval(axpy(z, hs, k3), t1, c);
            for (size_t i = 0; i < z.size(); ++i) {
                z[i] += (hs / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        return z;
    };
    return integrate_impl(z_start, grid, direction, rk4_span);
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
    const size_t d = traj.points.empty() ? 0 : traj.points.front().z.size();
    out << "step,t";
    for (size_t j = 0; j < d; ++j) out << ",z_" << j;
    for (const auto& name : traj.annotation_names) out << "," << name;
    out << "\n";
    char buf[40];
    auto put = [&](double x) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        out << "," << buf;
    };
    for (size_t i = 0; i < traj.points.size(); ++i) {
        out << i;
        put(traj.points[i].t);
        for (double x : traj.points[i].z) put(x);
        if (!traj.annotations.empty()) {
            for (double x : traj.annotations[i]) put(x);
        }
        out << "\n";
    }
}

}  // namespace flowlab

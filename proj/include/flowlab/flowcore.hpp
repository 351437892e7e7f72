#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "flowlab/errors.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

/// Conditioning label for a velocity field: either the unconditional branch
/// (null) or a class id in [0, n_conditions) of the active data model.
class Condition {
public:
    static Condition null() { return Condition(-1); }
    static Condition class_id(int id) {
        if (id < 0) throw RejectedInput("Condition::class_id: negative id");
        return Condition(id);
    }

    bool is_null() const { return id_ < 0; }
    int id() const {
        if (is_null()) throw RejectedInput("Condition::id called on null condition");
        return id_;
    }

    bool operator==(const Condition& o) const { return id_ == o.id_; }
    bool operator!=(const Condition& o) const { return id_ != o.id_; }

private:
    explicit Condition(int id) : id_(id) {}
    int id_;
};

/// Discrete time grid on [0, 1]. Convention: t = 0 is data, t = 1 is pure
/// noise. points[i] ascend with i; denoising iterates i = n_max ... 1 with
/// negative step t_{i-1} - t_i.
struct TimeGrid {
    std::vector<double> points;  // size n_steps()+1, points[0] == 0
    int n_max = 0;               // iteration start index, 1 <= n_max <= n_steps()

    static TimeGrid uniform(int n_steps, double n_max_fraction = 1.0);

    int n_steps() const { return static_cast<int>(points.size()) - 1; }
    double t(int i) const { return points[static_cast<size_t>(i)]; }

    /// Throws RejectedInput on any violated invariant.
    void validate() const;
};

/// Evaluator contract: (latent, time, condition) -> velocity. Implementations
/// must be pure (identical inputs give identical outputs) and return finite
/// vectors for finite inputs with t in [0, 1].
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual int dim() const = 0;
    virtual Vec eval(const Vec& z, double t, const Condition& c) const = 0;
};

struct TrajectoryPoint {
    double t = 0.0;
    Vec z;
    Vec v;  // velocity used to leave this state; empty at the terminal state
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
    std::vector<std::string> annotation_names;     // optional extra CSV columns
    std::vector<std::vector<double>> annotations;  // one row per point when used

    const Vec& final_state() const { return points.back().z; }
    double final_time() const { return points.back().t; }
};

enum class Direction { forward, backward };

/// Linear interpolant between data x0 (t=0) and noise (t=1):
/// (1-t)*x0 + t*noise. Endpoints are reproduced bit-exactly.
Vec interpolate(const Vec& x0, const Vec& noise, double t);

/// One explicit Euler update z + dt*v. dt is signed; denoising uses dt < 0.
Vec euler_step(const Vec& z, const Vec& v, double dt);

/// Explicit Euler over the grid. forward walks i = 0 .. n_max (dt > 0),
/// backward walks i = n_max .. 1 (dt < 0). The trajectory holds one entry per
/// executed step plus the initial state.
Trajectory integrate_euler(const VelocityField& field, const Vec& z_start, const TimeGrid& grid,
                           const Condition& c, Direction direction);

/// Ground-truth integrator for convergence tests: classical RK4 on a 10x
/// refined grid, recorded at the input grid points.
Trajectory integrate_reference(const VelocityField& field, const Vec& z_start, const TimeGrid& grid,
                               const Condition& c, Direction direction);

/// CSV export, header `step,t,z_0,...,z_{d-1}` plus any annotation columns.
void write_trajectory_csv(const Trajectory& traj, std::ostream& out);

}  // namespace flowlab

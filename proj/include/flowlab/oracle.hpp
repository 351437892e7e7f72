#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowlab/flowcore.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

/// Isotropic Gaussian mixture component.
struct GaussianComponent {
    Vec mean;
    double sigma = 1.0;   // isotropic standard deviation, > 0
    double weight = 1.0;  // > 0; normalized within a condition at model build
};

/// Per-condition Gaussian-mixture data model. Provides exact velocity fields
/// and posteriors for the interpolant z_t = (1-t)*x + t*eps with x drawn from
/// the condition's mixture and eps standard normal. The null condition uses
/// the class-prior-weighted marginal mixture.
class GmmConditionalModel {
public:
    /// components[k] lists class k's components; priors are normalized, and so
    /// are weights within each class.
    GmmConditionalModel(std::vector<std::vector<GaussianComponent>> components,
                        std::vector<double> class_priors);

    int dim() const { return dim_; }
    int num_conditions() const { return static_cast<int>(components_.size()); }
    const std::vector<GaussianComponent>& components(int class_id) const;
    double class_prior(int class_id) const;

    /// i.i.d. draws from the condition's mixture; null draws from the marginal.
    std::vector<Vec> sample_data(const Condition& c, int n, uint64_t seed) const;

    /// Exact E[eps - x | z_t = z, c]: the ideal rectified-flow velocity.
    Vec oracle_velocity(const Vec& z, double t, const Condition& c) const;

    /// Exact E[x | z_t = z, c]. t = 0 returns z (the latent is the data).
    Vec posterior_mean_x0(const Vec& z, double t, const Condition& c) const;

    /// Brute-force kernel-regression estimate of E[eps - x | z_t ~ z] from
    /// n_samples simulated triples; independent check of oracle_velocity.
    Vec mc_velocity_estimate(const Vec& z, double t, const Condition& c, int n_samples,
                             double bandwidth, uint64_t seed) const;

    /// p(class | x) at the data level, from class priors and mixture densities.
    std::vector<double> class_posterior(const Vec& x) const;

private:
    struct Weighted {
        const GaussianComponent* comp;
        double log_weight;
    };
    std::vector<Weighted> condition_view(const Condition& c) const;
    void conditional_moments(const Vec& z, double t, const Condition& c, Vec& e_x,
                             Vec& e_eps) const;

    std::vector<std::vector<GaussianComponent>> components_;
    std::vector<double> class_priors_;
    int dim_;
};

/// Exposes a model's exact velocity as a VelocityField.
class OracleField final : public VelocityField {
public:
    explicit OracleField(const GmmConditionalModel& model) : model_(&model) {}
    int dim() const override { return model_->dim(); }
    Vec eval(const Vec& z, double t, const Condition& c) const override {
        return model_->oracle_velocity(z, t, c);
    }

private:
    const GmmConditionalModel* model_;
};

/// Plain-text model description (grammar documented in README). Writing with
/// 17 significant digits makes the round-trip value-lossless.
void write_model(const GmmConditionalModel& model, std::ostream& out);
GmmConditionalModel parse_model(std::istream& in);
GmmConditionalModel load_model(const std::string& path);
void save_model(const GmmConditionalModel& model, const std::string& path);

}  // namespace flowlab

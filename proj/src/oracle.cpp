#include "flowlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "flowlab/rng.hpp"
#include "flowlab/textio.hpp"

namespace flowlab {

namespace {

constexpr double kMinEffectiveSamples = 10.0;

void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw RejectedInput("oracle: t must be in [0,1]");
}

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

GmmConditionalModel::GmmConditionalModel(std::vector<std::vector<GaussianComponent>> components,
                                         std::vector<double> class_priors)
    : components_(std::move(components)), class_priors_(std::move(class_priors)) {
    if (components_.empty()) throw RejectedInput("model: need at least one condition");
    if (class_priors_.size() != components_.size()) {
        throw RejectedInput("model: one prior per condition required");
    }
    dim_ = -1;
    for (auto& cls : components_) {
        if (cls.empty()) throw RejectedInput("model: each condition needs a component");
        double wsum = 0.0;
        for (auto& comp : cls) {
            if (dim_ < 0) dim_ = static_cast<int>(comp.mean.size());
            if (static_cast<int>(comp.mean.size()) != dim_ || dim_ < 1) {
                throw RejectedInput("model: inconsistent component dimension");
            }
            if (!is_finite(comp.mean)) throw RejectedInput("model: non-finite mean");
            if (!(comp.sigma > 0.0)) throw RejectedInput("model: sigma must be > 0");
            if (!(comp.weight > 0.0)) throw RejectedInput("model: weight must be > 0");
            wsum += comp.weight;
        }
        for (auto& comp : cls) comp.weight /= wsum;
    }
    double psum = 0.0;
    for (double p : class_priors_) {
        if (!(p > 0.0)) throw RejectedInput("model: class priors must be > 0");
        psum += p;
    }
    for (double& p : class_priors_) p /= psum;
}

const std::vector<GaussianComponent>& GmmConditionalModel::components(int class_id) const {
    if (class_id < 0 || class_id >= num_conditions()) {
        throw RejectedInput("model: unknown class id " + std::to_string(class_id));
    }
    return components_[static_cast<size_t>(class_id)];
}

double GmmConditionalModel::class_prior(int class_id) const {
    components(class_id);  // bounds check
    return class_priors_[static_cast<size_t>(class_id)];
}

std::vector<GmmConditionalModel::Weighted> GmmConditionalModel::condition_view(
    const Condition& c) const {
    std::vector<Weighted> view;
    if (c.is_null()) {
        for (size_t k = 0; k < components_.size(); ++k) {
            for (const auto& comp : components_[k]) {
                view.push_back({&comp, std::log(class_priors_[k]) + std::log(comp.weight)});
            }
        }
    } else {
        for (const auto& comp : components(c.id())) {
            view.push_back({&comp, std::log(comp.weight)});
        }
    }
    return view;
}

std::vector<Vec> GmmConditionalModel::sample_data(const Condition& c, int n, uint64_t seed) const {
    if (n < 1) throw RejectedInput("sample_data: n must be >= 1");
    const auto view = condition_view(c);
    std::vector<double> weights(view.size());
    for (size_t i = 0; i < view.size(); ++i) weights[i] = std::exp(view[i].log_weight);

    Rng rng(seed);
    std::vector<Vec> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        // Cumulative-weight walk keeps component choice platform-independent.
        double u = rng.uniform();
        size_t pick = weights.size() - 1;
        double acc = 0.0;
        for (size_t k = 0; k < weights.size(); ++k) {
            acc += weights[k];
            if (u < acc) {
                pick = k;
                break;
            }
        }
        const auto& comp = *view[pick].comp;
        Vec x = rng.gaussian_vec(dim_);
        for (int j = 0; j < dim_; ++j) x[static_cast<size_t>(j)] = comp.mean[static_cast<size_t>(j)] + comp.sigma * x[static_cast<size_t>(j)];
        out.push_back(std::move(x));
    }
    return out;
}

// Joint-Gaussian conditionals under z = (1-t)x + t*eps, per component:
//   z | k ~ N((1-t)mu, s2 I),   s2 = (1-t)^2 sigma^2 + t^2
//   E[x|z,k]   = mu + (1-t) sigma^2 / s2 * (z - (1-t)mu)
//   E[eps|z,k] = t / s2 * (z - (1-t)mu)
// Responsibilities come from the component marginals of z, in log space.
void GmmConditionalModel::conditional_moments(const Vec& z, double t, const Condition& c,
                                              Vec& e_x, Vec& e_eps) const {
    if (static_cast<int>(z.size()) != dim_) throw RejectedInput("oracle: latent dimension mismatch");
    check_time(t);
    const auto view = condition_view(c);
    const double a = 1.0 - t;

    std::vector<double> log_resp(view.size());
    for (size_t k = 0; k < view.size(); ++k) {
        const auto& comp = *view[k].comp;
        const double s2 = a * a * comp.sigma * comp.sigma + t * t;
        double q = 0.0;
        for (int j = 0; j < dim_; ++j) {
            const double r = z[static_cast<size_t>(j)] - a * comp.mean[static_cast<size_t>(j)];
            q += r * r;
        }
        log_resp[k] = view[k].log_weight - 0.5 * dim_ * std::log(s2) - 0.5 * q / s2;
    }
    const double lse = log_sum_exp(log_resp);

    e_x.assign(static_cast<size_t>(dim_), 0.0);
    e_eps.assign(static_cast<size_t>(dim_), 0.0);
    for (size_t k = 0; k < view.size(); ++k) {
        const double resp = std::exp(log_resp[k] - lse);
        if (resp == 0.0) continue;
        const auto& comp = *view[k].comp;
        const double s2 = a * a * comp.sigma * comp.sigma + t * t;
        const double gain_x = a * comp.sigma * comp.sigma / s2;
        const double gain_eps = t / s2;
        for (int j = 0; j < dim_; ++j) {
            const size_t sj = static_cast<size_t>(j);
            const double r = z[sj] - a * comp.mean[sj];
            e_x[sj] += resp * (comp.mean[sj] + gain_x * r);
            e_eps[sj] += resp * (gain_eps * r);
        }
    }
}

Vec GmmConditionalModel::oracle_velocity(const Vec& z, double t, const Condition& c) const {
    Vec e_x, e_eps;
    conditional_moments(z, t, c, e_x, e_eps);
    return sub(e_eps, e_x);
}

Vec GmmConditionalModel::posterior_mean_x0(const Vec& z, double t, const Condition& c) const {
    if (static_cast<int>(z.size()) != dim_) throw RejectedInput("oracle: latent dimension mismatch");
    check_time(t);
    if (t == 0.0) return z;
    Vec e_x, e_eps;
    conditional_moments(z, t, c, e_x, e_eps);
    return e_x;
}

Vec GmmConditionalModel::mc_velocity_estimate(const Vec& z, double t, const Condition& c,
                                              int n_samples, double bandwidth,
                                              uint64_t seed) const {
    if (static_cast<int>(z.size()) != dim_) throw RejectedInput("oracle: latent dimension mismatch");
    check_time(t);
    if (n_samples < 1000) throw RejectedInput("mc_velocity_estimate: n_samples must be >= 1000");
    if (!(bandwidth > 0.0)) throw RejectedInput("mc_velocity_estimate: bandwidth must be > 0");

    const auto xs = sample_data(c, n_samples, seed);
    Rng rng(derive_seed(seed, 0x6e6f697365ull));  // separate stream for the noise draws

    Vec num(static_cast<size_t>(dim_), 0.0);
    double wsum = 0.0;
    double w2sum = 0.0;
    const double inv_2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    for (const auto& x : xs) {
        Vec eps = rng.gaussian_vec(dim_);
        double q = 0.0;
        for (int j = 0; j < dim_; ++j) {
            const size_t sj = static_cast<size_t>(j);
            const double zt = (1.0 - t) * x[sj] + t * eps[sj];
            const double r = zt - z[sj];
            q += r * r;
        }
        const double w = std::exp(-q * inv_2h2);
        wsum += w;
        w2sum += w * w;
        for (int j = 0; j < dim_; ++j) {
            const size_t sj = static_cast<size_t>(j);
            num[sj] += w * (eps[sj] - x[sj]);
        }
    }
    const double ess = w2sum > 0.0 ? wsum * wsum / w2sum : 0.0;
    if (ess < kMinEffectiveSamples) {
        throw EstimateUnreliable("mc_velocity_estimate: effective sample size " +
                                 std::to_string(ess) + " below " +
                                 std::to_string(kMinEffectiveSamples));
    }
    return scale(num, 1.0 / wsum);
}

std::vector<double> GmmConditionalModel::class_posterior(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim_) throw RejectedInput("oracle: latent dimension mismatch");
    std::vector<double> log_p(components_.size());
    for (size_t k = 0; k < components_.size(); ++k) {
        std::vector<double> terms;
        terms.reserve(components_[k].size());
        for (const auto& comp : components_[k]) {
            const double s2 = comp.sigma * comp.sigma;
            double q = 0.0;
            for (int j = 0; j < dim_; ++j) {
                const size_t sj = static_cast<size_t>(j);
                const double r = x[sj] - comp.mean[sj];
                q += r * r;
            }
            terms.push_back(std::log(comp.weight) - 0.5 * dim_ * std::log(s2) - 0.5 * q / s2);
        }
        log_p[k] = std::log(class_priors_[k]) + log_sum_exp(terms);
    }
    const double lse = log_sum_exp(log_p);
    std::vector<double> post(log_p.size());
    for (size_t k = 0; k < log_p.size(); ++k) post[k] = std::exp(log_p[k] - lse);
    return post;
}

// ---------------------------------------------------------------------------
// Model description file
// ---------------------------------------------------------------------------

void write_model(const GmmConditionalModel& model, std::ostream& out) {
    out << "gmm-model v1\n";
    out << "dim " << model.dim() << "\n";
    out << "conditions " << model.num_conditions() << "\n";
    for (int k = 0; k < model.num_conditions(); ++k) {
        out << "condition " << k << " prior " << g17(model.class_prior(k)) << "\n";
        for (const auto& comp : model.components(k)) {
            out << "component weight " << g17(comp.weight) << " sigma " << g17(comp.sigma)
                << " mean";
            for (double m : comp.mean) out << " " << g17(m);
            out << "\n";
        }
    }
}

GmmConditionalModel parse_model(std::istream& in) {
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw RejectedInput("model description line " + std::to_string(line_no) + ": " + msg);
    };
    auto next_line = [&](std::string& out_line) -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            const auto pos = line.find_first_not_of(" \t\r");
            if (pos == std::string::npos || line[pos] == '#') continue;
            out_line = line;
            return true;
        }
        return false;
    };

    std::string l;
    if (!next_line(l) || l.rfind("gmm-model", 0) != 0) {
        fail("expected header 'gmm-model v1'");
    }
    {
        std::istringstream ss(l);
        std::string tag, version;
        ss >> tag >> version;
        if (version != "v1") fail("unsupported version '" + version + "'");
    }

    int dim = 0, n_conditions = 0;
    if (!next_line(l)) fail("missing 'dim'");
    {
        std::istringstream ss(l);
        std::string tag;
        if (!(ss >> tag >> dim) || tag != "dim" || dim < 1) fail("bad 'dim' line");
    }
    if (!next_line(l)) fail("missing 'conditions'");
    {
        std::istringstream ss(l);
        std::string tag;
        if (!(ss >> tag >> n_conditions) || tag != "conditions" || n_conditions < 1) {
            fail("bad 'conditions' line");
        }
    }

    std::vector<std::vector<GaussianComponent>> comps(static_cast<size_t>(n_conditions));
    std::vector<double> priors(static_cast<size_t>(n_conditions), 0.0);
    int current = -1;
    while (next_line(l)) {
        std::istringstream ss(l);
        std::string tag;
        ss >> tag;
        if (tag == "condition") {
            int k;
            std::string prior_tag;
            double prior;
            if (!(ss >> k >> prior_tag >> prior) || prior_tag != "prior") fail("bad 'condition' line");
            if (k < 0 || k >= n_conditions) fail("condition id out of range");
            priors[static_cast<size_t>(k)] = prior;
            current = k;
        } else if (tag == "component") {
            if (current < 0) fail("'component' before any 'condition'");
            GaussianComponent comp;
            std::string wt, st, mt;
            if (!(ss >> wt >> comp.weight >> st >> comp.sigma >> mt) || wt != "weight" ||
                st != "sigma" || mt != "mean") {
                fail("bad 'component' line");
            }
            comp.mean.resize(static_cast<size_t>(dim));
            for (int j = 0; j < dim; ++j) {
                if (!(ss >> comp.mean[static_cast<size_t>(j)])) fail("component mean needs dim entries");
            }
            double extra;
            if (ss >> extra) fail("component mean has too many entries");
            comps[static_cast<size_t>(current)].push_back(std::move(comp));
        } else {
            fail("unknown directive '" + tag + "'");
        }
    }
    try {
        return GmmConditionalModel(std::move(comps), std::move(priors));
    } catch (const RejectedInput& e) {
        throw RejectedInput(std::string("model description: ") + e.what());
    }
}

GmmConditionalModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RejectedInput("cannot open model description '" + path + "'");
    return parse_model(in);
}

void save_model(const GmmConditionalModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw RejectedInput("cannot write model description '" + path + "'");
    write_model(model, out);
}

}  // namespace flowlab

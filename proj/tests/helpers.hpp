#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "flowlab/flowcore.hpp"
#include "flowlab/oracle.hpp"

namespace flowlab::testing {

/// Two symmetric single-Gaussian classes with means (+sep/2, 0, ...) and
/// (-sep/2, 0, ...), equal priors.
inline GmmConditionalModel two_class_model(int d = 2, double sep = 4.0, double sigma = 0.5) {
    Vec mu_pos(static_cast<size_t>(d), 0.0);
    Vec mu_neg(static_cast<size_t>(d), 0.0);
    mu_pos[0] = sep / 2.0;
    mu_neg[0] = -sep / 2.0;
    return GmmConditionalModel({{{mu_pos, sigma, 1.0}}, {{mu_neg, sigma, 1.0}}}, {0.5, 0.5});
}

/// Single-class, single-component model.
inline GmmConditionalModel single_gaussian_model(Vec mean, double sigma) {
    return GmmConditionalModel({{{std::move(mean), sigma, 1.0}}}, {1.0});
}

/// Wraps a field and logs every evaluation's condition and time.
class RecordingField final : public VelocityField {
public:
    explicit RecordingField(const VelocityField& inner) : inner_(&inner) {}
    int dim() const override { return inner_->dim(); }
    Vec eval(const Vec& z, double t, const Condition& c) const override {
        calls.emplace_back(t, c);
        return inner_->eval(z, t, c);
    }

    mutable std::vector<std::pair<double, Condition>> calls;

private:
    const VelocityField* inner_;
};

/// Fresh scratch directory under the test binary's working directory.
inline std::string scratch_dir(const std::string& name) {
    const std::string dir = "test_scratch/" + name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::string& path) {
    std::string out;
    std::ifstream in(path, std::ios::binary);
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        out.append(buf, static_cast<size_t>(in.gcount()));
    }
    return out;
}

}  // namespace flowlab::testing

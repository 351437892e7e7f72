#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "flowlab/errors.hpp"

namespace flowlab {

/// Dense d-dimensional latent / velocity vector. All public APIs treat these
/// as immutable values; helpers below return fresh vectors.
using Vec = std::vector<double>;

inline bool is_finite(const Vec& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline void require_same_dim(const Vec& a, const Vec& b, const char* what) {
    if (a.size() != b.size()) {
        throw RejectedInput(std::string(what) + ": dimension mismatch (" +
                            std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

inline Vec add(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "add");
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "sub");
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
    return r;
}

inline Vec scale(const Vec& a, double s) {
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
    return r;
}

/// r = a + s*b
inline Vec axpy(const Vec& a, double s, const Vec& b) {
    require_same_dim(a, b, "axpy");
    Vec r(a.size());
    for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] + s * b[i];
    return r;
}

inline void add_scaled_inplace(Vec& a, double s, const Vec& b) {
    require_same_dim(a, b, "add_scaled_inplace");
    for (size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

inline double dot(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(const Vec& a) { return dot(a, a); }

inline double norm(const Vec& a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "squared_distance");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Mean squared error per dimension: ||a - b||^2 / d.
inline double mse(const Vec& a, const Vec& b) {
    if (a.empty()) return 0.0;
    return squared_distance(a, b) / static_cast<double>(a.size());
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
    require_same_dim(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace flowlab

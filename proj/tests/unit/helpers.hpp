#pragma once

#include <functional>
#include <random>

#include "kinf/data.hpp"
#include "kinf/model.hpp"
#include "kinf/types.hpp"

namespace kinf::testing {

inline Vec random_vec(Index n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

inline Mat random_mat(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
    const Vec v = random_vec(r * c, seed, scale);
    return Eigen::Map<const Mat>(v.data(), r, c);
}

inline double rel_err(const Mat& a, const Mat& b) {
    const double denom = std::max(b.norm(), 1e-300);
    return (a - b).norm() / denom;
}

// central differences of a vector-valued function along direction v
inline Vec central_diff(const std::function<Vec(const Vec&)>& f, const Vec& x, const Vec& v, double h) {
    return (f(x + h * v) - f(x - h * v)) / (2.0 * h);
}

inline ModelSpec small_spec(std::vector<Index> widths, std::uint64_t seed,
                            Parameterization p = Parameterization::ntk, Activation a = Activation::relu) {
    ModelSpec s;
    s.widths = std::move(widths);
    s.init_seed = seed;
    s.parameterization = p;
    s.activation = a;
    return s;
}

}  // namespace kinf::testing

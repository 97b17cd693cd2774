#pragma once

#include <functional>
#include <optional>

#include "kinf/types.hpp"

namespace kinf {

using LinearOperator = std::function<Vec(const Vec&)>;

enum class Preconditioner { none, jacobi };

struct CgOptions {
    double rel_tol = 1e-10;
    int max_iters = 1000;
    Preconditioner preconditioner = Preconditioner::none;

    void validate() const;
};

struct CgResult {
    Vec solution;
    double residual = 0.0;  // true |A x - b|, recomputed at exit
    int iters = 0;
    bool max_iters_reached = false;
};

// Conjugate gradients for symmetric positive definite operators. A
// non-positive curvature p^T A p raises IndefiniteOperator. Running out of
// iterations is not an error: the last iterate is returned and flagged.
// `diagonal` is required for the Jacobi preconditioner.
CgResult cg_solve(const LinearOperator& A, const Vec& rhs, const CgOptions& opts,
                  const std::optional<Vec>& diagonal = std::nullopt, const Vec* initial = nullptr);

}  // namespace kinf

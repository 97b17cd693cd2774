#include "kinf/cg.hpp"

#include <cmath>
#include <string>

#include "kinf/errors.hpp"

namespace kinf {

void CgOptions::validate() const {
    if (!(rel_tol > 0.0)) throw ConfigError("cg rel_tol must be positive");
    if (max_iters < 1) throw ConfigError("cg max_iters must be at least 1");
}

CgResult cg_solve(const LinearOperator& A, const Vec& rhs, const CgOptions& opts, const std::optional<Vec>& diagonal,
                  const Vec* initial) {
    opts.validate();
    if (!rhs.allFinite()) throw NonFiniteEncountered("cg right-hand side is not finite");
    Vec inv_diag;
    if (opts.preconditioner == Preconditioner::jacobi) {
        if (!diagonal || diagonal->size() != rhs.size()) {
            throw ConfigError("jacobi preconditioner needs the operator diagonal");
        }
        if ((diagonal->array() <= 0.0).any()) throw IndefiniteOperator("operator diagonal has nonpositive entries");
        inv_diag = diagonal->cwiseInverse();
    }
    auto precondition = [&](const Vec& r) -> Vec { return inv_diag.size() ? Vec(inv_diag.cwiseProduct(r)) : r; };

    CgResult res;
    const double target = opts.rel_tol * rhs.norm();
    res.solution = initial ? *initial : Vec::Zero(rhs.size());
    Vec r = initial ? Vec(rhs - A(res.solution)) : rhs;
    // restart from the true residual when the recursive one has drifted
    for (int restart = 0; restart < 4 && r.norm() > target && res.iters < opts.max_iters; ++restart) {
        Vec z = precondition(r);
        Vec p = z;
        double rz = r.dot(z);
        while (res.iters < opts.max_iters) {
            const Vec Ap = A(p);
            const double curvature = p.dot(Ap);
            if (!std::isfinite(curvature)) throw NonFiniteEncountered("cg operator returned non-finite values");
            if (curvature <= 0.0) {
                throw IndefiniteOperator("cg found p^T A p = " + std::to_string(curvature) + " at iteration " +
                                         std::to_string(res.iters));
            }
            const double alpha = rz / curvature;
            res.solution += alpha * p;
            r -= alpha * Ap;
            ++res.iters;
            if (r.norm() <= target) break;
            z = precondition(r);
            const double rz_next = r.dot(z);
            p = z + (rz_next / rz) * p;
            rz = rz_next;
        }
        r = rhs - A(res.solution);
    }
    res.residual = r.norm();
    res.max_iters_reached = res.residual > target && res.iters >= opts.max_iters;
    if (!res.solution.allFinite()) throw NonFiniteEncountered("cg iterate became non-finite");
    return res;
}

}  // namespace kinf

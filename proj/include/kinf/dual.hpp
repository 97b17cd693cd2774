#pragma once

#include <vector>

#include "kinf/cg.hpp"
#include "kinf/data.hpp"
#include "kinf/kernel.hpp"
#include "kinf/primal.hpp"
#include "kinf/training.hpp"

namespace kinf {

enum class Block { forget, retain };

// alpha* and delta_alpha over (point, output dim), forget points first.
struct DualCoefficients {
    Vec alpha_star;
    Vec delta_alpha;
    Index d_out = 1;
    Index forget_count = 0;

    auto forget_block() const { return delta_alpha.head(forget_count * d_out); }
    auto retain_block() const { return delta_alpha.tail(delta_alpha.size() - forget_count * d_out); }
};

// -(1/lambda) * (1/N) * grad_f of the loss at the given outputs.
Vec alpha_from_outputs(const Mat& outputs, const Mat& targets, const RiskConfig& cfg);

struct RepresenterCheck {
    double residual = 0.0;  // |theta - c - J^T alpha| / |theta - c|
};

// alpha* for a stationary point of the linearized risk. Fails with
// NotAtOptimum when theta - c = J^T alpha* does not hold to `tol`.
Vec alpha_star(const Predictor& lin, const Vec& theta_hat, const LabeledDataset& ds, const RiskConfig& cfg,
               double tol = 1e-6, RepresenterCheck* check = nullptr);

struct DualSolve {
    DualCoefficients coefficients;
    double residual = 0.0;
    int iters = 0;
    bool dense = false;
    bool max_iters_reached = false;
    std::vector<double> shard_seconds;
};

// Influence system in the dual variables for a split whose forget rows come
// first. Only kernel slices, outputs at the optimum and targets are needed.
class DualSystem {
public:
    // outputs/targets are d_out x N. shards == 0 multiplies K_rr directly;
    // shards >= 1 routes K_rr products through sharded_matvec.
    DualSystem(const KernelMatrix& K, Mat outputs, Mat targets, Index forget_count, RiskConfig cfg, int shards = 0);

    Index d_out() const { return d_; }
    Index forget_count() const { return nf_; }
    Index retain_count() const { return nr_; }
    const Vec& alpha_star() const { return alpha_; }
    // (1/|D_f|) grad_f loss over the forget points
    const Vec& forget_gradient() const { return g_f_; }
    // per-retain-point loss Hessians, each already divided by |D_r|
    const std::vector<Mat>& retain_curvature() const { return B_r_; }

    Mat hessian_block(Block i, Block j) const;
    Mat full_hessian() const;
    Vec rhs(Block i) const;
    Vec full_rhs() const;

    // v -> (|D_r|/|D|) (K_rr B_r K_rr v + lambda K_rr v)
    Vec retain_operator(const Vec& v) const;
    Vec retain_diagonal() const;

    // Forget block fixed analytically; retain block by CG or, when
    // d_out*|D_r| <= dense_limit, a dense factorisation.
    DualSolve solve_reduced(const CgOptions& opts, Index dense_limit = 512) const;
    // Whole system with no block known in advance; dense.
    Vec solve_unreduced() const;

private:
    Index points(Block b) const { return b == Block::forget ? nf_ : nr_; }
    Index offset(Block b) const { return b == Block::forget ? 0 : nf_; }
    Vec apply_curvature(const Vec& v) const;
    Vec k_apply(Block i, Block j, const Vec& v) const;

    const KernelMatrix& K_;
    Index d_ = 1;
    Index n_ = 0;
    Index nf_ = 0;
    Index nr_ = 0;
    RiskConfig cfg_;
    int shards_ = 0;
    Vec alpha_;
    Vec g_f_;
    std::vector<Mat> B_r_;
    bool identity_curvature_ = false;
    mutable std::vector<double> shard_seconds_;
};

Mat dual_hessian_block(const DualSystem& sys, Block i, Block j);
Vec dual_rhs(const DualSystem& sys, Block i);
DualSolve solve_reduced(const DualSystem& sys, const CgOptions& opts);

// theta_hat + J^T delta_alpha, J taken from the tape at the reference point.
Vec map_to_params(const Mlp& model, const Tape& reference_tape, const Vec& theta_hat, const Vec& delta_alpha);
Vec map_to_params(const Mat& stacked_jacobian, const Vec& theta_hat, const Vec& delta_alpha);

// K_t is test-vs-train (d_out*N_t x d_out*N). test_outputs / test_targets are
// d_out x N_t. Loss changes sum every d_out consecutive entries.
ChangePrediction predict_changes_dual(const KernelMatrix& K_t, const KernelMatrix& K, const Vec& delta_alpha,
                                      const Vec& alpha_star, const Mat& test_outputs, const Mat& test_targets,
                                      const RiskConfig& cfg);

}  // namespace kinf

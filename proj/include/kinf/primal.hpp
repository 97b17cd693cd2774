#pragma once

#include <memory>
#include <vector>

#include "kinf/cg.hpp"
#include "kinf/data.hpp"
#include "kinf/training.hpp"

namespace kinf {

enum class HessianForm {
    upweighted,  // Hessian of the risk with forget points weighted out
    full_data,   // Hessian of the full-data risk
};

struct TestChange {
    Vec output_change;  // d_out
    double loss_change_raw = 0.0;
    double loss_change_regularized = 0.0;
};

struct ChangePrediction {
    Mat output_change;         // d_out x N_t
    Vec loss_change_raw;       // N_t
    Vec loss_change_regularized;

    std::vector<TestChange> per_test() const;
};

struct InfluenceReport {
    Vec delta_theta;
    double residual = 0.0;
    double rhs_norm = 0.0;
    int iters = 0;
    bool max_iters_reached = false;
    bool not_at_optimum = false;
    double stationarity = 0.0;  // |grad L_D(theta*)|
    double wall_cold = 0.0;
    std::vector<double> wall_warm;
    ChangePrediction changes;
};

// v -> H v for the chosen Hessian form. The upweighted form is evaluated as
// (|D_r|/|D|) times the Hessian of the retain risk, which is the same operator.
class UpweightedHessian {
public:
    UpweightedHessian(const Predictor& p, const Vec& theta_star, const SplitDataset& split, const RiskConfig& cfg,
                      HessianForm form = HessianForm::upweighted);

    Vec operator()(const Vec& v) const { return scale_ * hvp_(v); }
    Vec diagonal() const;
    LinearOperator as_operator() const;

private:
    std::shared_ptr<Risk> risk_;
    Vec theta_;
    double scale_ = 1.0;
    LinearOperator hvp_;
};

// Parameter-space unlearning. Construction does the per-split setup (operator,
// optional preconditioner diagonal); solve() forms the right-hand side and
// runs CG, so repeated calls measure warm runs.
class PrimalUnlearner {
public:
    PrimalUnlearner(const Predictor& p, Vec theta_star, const SplitDataset& split, RiskConfig cfg, CgOptions opts,
                    HessianForm form = HessianForm::upweighted);

    InfluenceReport solve() const;
    double stationarity() const { return stationarity_; }

private:
    Predictor predictor_;
    Vec theta_star_;
    SplitDataset split_;
    RiskConfig cfg_;
    CgOptions opts_;
    UpweightedHessian hessian_;
    std::optional<Vec> diagonal_;
    double stationarity_ = 0.0;
};

inline constexpr double kStationarityThreshold = 1e-6;

LinearOperator upweighted_hessian_op(const Predictor& p, const Vec& theta_star, const SplitDataset& split,
                                     const RiskConfig& cfg, HessianForm form = HessianForm::upweighted);

// theta_r ~ theta* + delta_theta; wall_cold covers construction and one solve.
InfluenceReport influence_params_primal(const Predictor& p, const Vec& theta_star, const SplitDataset& split,
                                        const RiskConfig& cfg, const CgOptions& opts,
                                        HessianForm form = HessianForm::upweighted);

// J(x_t) delta for each test input (d_out x N_t).
Mat predict_output_change_primal(const Predictor& p, const Vec& theta_star, const Vec& delta_theta, const Mat& X_t);

// grad_theta of the per-point loss at theta*, dotted with delta. The
// regularized variant adds lambda (theta* - c)^T delta.
ChangePrediction predict_changes_primal(const Predictor& p, const Vec& theta_star, const Vec& delta_theta,
                                        const LabeledDataset& test, const RiskConfig& cfg);

}  // namespace kinf

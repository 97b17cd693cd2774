#include "kinf/primal.hpp"

#include <chrono>

#include "kinf/errors.hpp"

namespace kinf {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_split(const SplitDataset& split) {
    if (split.forget_count <= 0 || split.forget_count >= split.full.size()) {
        throw DegenerateSplit("forget and retain sets must both be nonempty");
    }
}

}  // namespace

std::vector<TestChange> ChangePrediction::per_test() const {
    std::vector<TestChange> out;
    for (Index t = 0; t < output_change.cols(); ++t) {
        out.push_back({output_change.col(t), loss_change_raw(t), loss_change_regularized(t)});
    }
    return out;
}

UpweightedHessian::UpweightedHessian(const Predictor& p, const Vec& theta_star, const SplitDataset& split,
                                     const RiskConfig& cfg, HessianForm form)
    : theta_(theta_star) {
    check_split(split);
    if (form == HessianForm::upweighted) {
        risk_ = std::make_shared<Risk>(p, split.retain_set(), cfg);
        scale_ = static_cast<double>(split.retain_count()) / static_cast<double>(split.full.size());
    } else {
        risk_ = std::make_shared<Risk>(p, split.full, cfg);
        scale_ = 1.0;
    }
    hvp_ = risk_->hessian_at(theta_);
}

Vec UpweightedHessian::diagonal() const { return scale_ * risk_->gauss_newton_diagonal(theta_); }

LinearOperator UpweightedHessian::as_operator() const {
    // shares the risk, so the operator stays valid after *this is gone
    auto risk = risk_;
    auto hvp = hvp_;
    const double scale = scale_;
    return [risk, hvp, scale](const Vec& v) -> Vec { return scale * hvp(v); };
}

LinearOperator upweighted_hessian_op(const Predictor& p, const Vec& theta_star, const SplitDataset& split,
                                     const RiskConfig& cfg, HessianForm form) {
    return UpweightedHessian(p, theta_star, split, cfg, form).as_operator();
}

PrimalUnlearner::PrimalUnlearner(const Predictor& p, Vec theta_star, const SplitDataset& split, RiskConfig cfg,
                                 CgOptions opts, HessianForm form)
    : predictor_(p),
      theta_star_(std::move(theta_star)),
      split_(split),
      cfg_(cfg),
      opts_(opts),
      hessian_(p, theta_star_, split, cfg, form) {
    opts_.validate();
    if (opts_.preconditioner == Preconditioner::jacobi) diagonal_ = hessian_.diagonal();
    stationarity_ = Risk(p, split.full, cfg).grad(theta_star_).norm();
}

InfluenceReport PrimalUnlearner::solve() const {
    InfluenceReport rep;
    const Risk forget(predictor_, split_.forget_set(), cfg_);
    const double share = static_cast<double>(split_.forget_count) / static_cast<double>(split_.full.size());
    const Vec rhs = share * forget.grad(theta_star_);
    const CgResult cg = cg_solve(hessian_.as_operator(), rhs, opts_, diagonal_);
    rep.delta_theta = cg.solution;
    rep.residual = cg.residual;
    rep.rhs_norm = rhs.norm();
    rep.iters = cg.iters;
    rep.max_iters_reached = cg.max_iters_reached;
    rep.stationarity = stationarity_;
    rep.not_at_optimum = stationarity_ >= kStationarityThreshold;
    return rep;
}

InfluenceReport influence_params_primal(const Predictor& p, const Vec& theta_star, const SplitDataset& split,
                                        const RiskConfig& cfg, const CgOptions& opts, HessianForm form) {
    const auto start = std::chrono::steady_clock::now();
    const PrimalUnlearner unlearner(p, theta_star, split, cfg, opts, form);
    InfluenceReport rep = unlearner.solve();
    rep.wall_cold = seconds_since(start);
    return rep;
}

Mat predict_output_change_primal(const Predictor& p, const Vec& theta_star, const Vec& delta_theta, const Mat& X_t) {
    if (delta_theta.size() != p.param_count()) throw DimensionMismatch("delta_theta has the wrong length");
    const BatchModel batch(p, X_t);
    return batch.jvp(theta_star, delta_theta);
}

ChangePrediction predict_changes_primal(const Predictor& p, const Vec& theta_star, const Vec& delta_theta,
                                        const LabeledDataset& test, const RiskConfig& cfg) {
    if (delta_theta.size() != p.param_count()) throw DimensionMismatch("delta_theta has the wrong length");
    const BatchModel batch(p, test.features);
    const Mat Y = test.targets.transpose();
    const Mat F = batch.outputs(theta_star);
    const Mat G = loss_grads(cfg.loss, F, Y);
    ChangePrediction out;
    out.output_change = batch.jvp(theta_star, delta_theta);
    // grad_theta loss(z_t) . delta = grad_f loss . (J delta)
    out.loss_change_raw = G.cwiseProduct(out.output_change).colwise().sum().transpose();
    const Vec center = cfg.center == Center::reference ? p.reference() : Vec::Zero(p.param_count());
    out.loss_change_regularized =
        out.loss_change_raw.array() + cfg.lambda * (theta_star - center).dot(delta_theta);
    return out;
}

}  // namespace kinf

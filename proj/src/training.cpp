#include "kinf/training.hpp"

#include <chrono>
#include <cmath>

#include "kinf/errors.hpp"
#include "kinf/kernel.hpp"

namespace kinf {

Predictor::Predictor(Mlp model, Vec reference, bool linearized)
    : model_(std::move(model)), reference_(std::move(reference)), linearized_(linearized) {
    if (reference_.size() != model_.param_count()) {
        throw DimensionMismatch("reference point length does not match the model");
    }
}

Predictor Predictor::network(Mlp model, Vec reference) { return {std::move(model), std::move(reference), false}; }

Predictor Predictor::linearized(Mlp model, Vec reference) { return {std::move(model), std::move(reference), true}; }

BatchModel::BatchModel(Predictor predictor, const Mat& X) : predictor_(std::move(predictor)), X_(X), points_(X.rows()) {
    if (predictor_.is_linearized()) {
        reference_tape_ = predictor_.model().record(predictor_.reference(), X_);
    }
}

const Tape& BatchModel::tape_at(const Vec& theta) const {
    if (reference_tape_) return *reference_tape_;
    if (!cache_ || cache_->theta.size() != theta.size() || cache_->theta != theta) {
        cache_ = predictor_.model().record(theta, X_);
    }
    return *cache_;
}

Mat BatchModel::outputs(const Vec& theta) const {
    const Tape& tape = tape_at(theta);
    if (!reference_tape_) return tape.outputs();
    if (theta.size() != predictor_.reference().size()) throw DimensionMismatch("theta length does not match model");
    return tape.outputs() + predictor_.model().jvp(tape, theta - predictor_.reference());
}

Mat BatchModel::jvp(const Vec& theta, const Vec& v) const { return predictor_.model().jvp(tape_at(theta), v); }

Vec BatchModel::vjp(const Vec& theta, const Mat& cotangent) const {
    return predictor_.model().vjp(tape_at(theta), cotangent);
}

Vec BatchModel::vjp_derivative(const Vec& theta, const Mat& cotangent, const Vec& v) const {
    if (reference_tape_) return Vec::Zero(predictor_.param_count());
    return predictor_.model().vjp_derivative(tape_at(theta), cotangent, v);
}

Mat BatchModel::point_jacobian(const Vec& theta, Index i) const {
    const Vec& at = reference_tape_ ? predictor_.reference() : theta;
    return predictor_.model().jacobian(at, X_.row(i).transpose());
}

void RiskConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("risk.lambda must be a finite positive number");
    }
}

Risk::Risk(const Predictor& predictor, const LabeledDataset& ds, RiskConfig cfg)
    : batch_(predictor, ds.features), Y_(ds.targets.transpose()), cfg_(cfg) {
    cfg_.validate();
    if (ds.size() < 1) throw EmptyDataset("risk over an empty dataset");
    if (ds.output_dim() != predictor.model().spec().output_dim()) {
        throw DimensionMismatch("dataset targets have " + std::to_string(ds.output_dim()) +
                                " columns, model outputs " + std::to_string(predictor.model().spec().output_dim()));
    }
    center_ = cfg_.center == Center::reference ? predictor.reference() : Vec::Zero(predictor.param_count());
}

double Risk::value(const Vec& theta) const {
    const Mat F = batch_.outputs(theta);
    return loss_values(cfg_.loss, F, Y_).mean() + 0.5 * cfg_.lambda * (theta - center_).squaredNorm();
}

double Risk::value_and_grad(const Vec& theta, Vec& grad) const {
    const Mat F = batch_.outputs(theta);
    const double n = static_cast<double>(size());
    const Mat G = loss_grads(cfg_.loss, F, Y_) / n;
    grad = batch_.vjp(theta, G) + cfg_.lambda * (theta - center_);
    return loss_values(cfg_.loss, F, Y_).mean() + 0.5 * cfg_.lambda * (theta - center_).squaredNorm();
}

Vec Risk::grad(const Vec& theta) const {
    Vec g;
    value_and_grad(theta, g);
    return g;
}

std::function<Vec(const Vec&)> Risk::hessian_at(const Vec& theta) const {
    const Mat F = batch_.outputs(theta);
    const double n = static_cast<double>(size());
    Mat G;
    if (!batch_.predictor().is_linearized()) G = loss_grads(cfg_.loss, F, Y_) / n;
    return [this, theta, F, G, n](const Vec& v) -> Vec {
        if (v.size() != theta.size()) throw DimensionMismatch("HVP direction has the wrong length");
        const Mat dF = batch_.jvp(theta, v);
        Vec out = batch_.vjp(theta, loss_hess_apply(cfg_.loss, F, Y_, dF) / n) + cfg_.lambda * v;
        if (G.size() > 0) out += batch_.vjp_derivative(theta, G, v);
        return out;
    };
}

Vec Risk::hvp(const Vec& theta, const Vec& v) const { return hessian_at(theta)(v); }

Vec Risk::gauss_newton_diagonal(const Vec& theta) const {
    const Mat F = batch_.outputs(theta);
    const double n = static_cast<double>(size());
    Vec diag = Vec::Constant(theta.size(), cfg_.lambda);
    for (Index i = 0; i < size(); ++i) {
        const Mat J = batch_.point_jacobian(theta, i);
        const Mat B = loss_hess_out(cfg_.loss, F.col(i), Y_.col(i));
        diag += ((B * J).cwiseProduct(J)).colwise().sum().transpose() / n;
    }
    return diag;
}

double risk_value(const Predictor& p, const Vec& theta, const LabeledDataset& ds, const RiskConfig& cfg) {
    return Risk(p, ds, cfg).value(theta);
}

Vec risk_grad(const Predictor& p, const Vec& theta, const LabeledDataset& ds, const RiskConfig& cfg) {
    return Risk(p, ds, cfg).grad(theta);
}

Vec risk_hvp(const Predictor& p, const Vec& theta, const LabeledDataset& ds, const RiskConfig& cfg, const Vec& v) {
    return Risk(p, ds, cfg).hvp(theta, v);
}

Trainer::Trainer(const Risk& risk, Optimizer opt, Vec theta0) : risk_(risk), opt_(opt), theta_(std::move(theta0)) {
    const double lr = std::visit([](const auto& o) { return o.lr; }, opt_);
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (const auto* m = std::get_if<Momentum>(&opt_); m && (m->beta < 0.0 || m->beta >= 1.0)) {
        throw ConfigError("momentum beta must lie in [0, 1)");
    }
    velocity_ = Vec::Zero(theta_.size());
}

void Trainer::step() {
    Vec g;
    loss_ = risk_.value_and_grad(theta_, g);
    grad_norm_ = g.norm();
    if (first_loss_ < 0.0) first_loss_ = loss_;
    if (!std::isfinite(loss_) || !std::isfinite(grad_norm_) || loss_ > 1e12 * (1.0 + first_loss_)) {
        throw DivergenceDetected("training diverged: loss " + std::to_string(loss_));
    }
    if (const auto* m = std::get_if<Momentum>(&opt_)) {
        velocity_ = m->beta * velocity_ - m->lr * g;
        theta_ += velocity_;
    } else {
        theta_ -= std::get<GradientDescent>(opt_).lr * g;
    }
}

TrainReport train(const Predictor& p, const LabeledDataset& ds, const RiskConfig& cfg, const Optimizer& opt,
                  const StopCriteria& stop, std::optional<Vec> theta0) {
    if (stop.max_epochs < 0) throw ConfigError("stop.max_epochs must be nonnegative");
    const auto start = std::chrono::steady_clock::now();
    Risk risk(p, ds, cfg);
    Trainer trainer(risk, opt, theta0 ? *theta0 : p.reference());
    TrainReport report;
    for (int epoch = 0; epoch < stop.max_epochs; ++epoch) {
        Vec g;
        const double loss = risk.value_and_grad(trainer.params(), g);
        if (std::isfinite(loss) && g.norm() <= stop.grad_tol) {
            report.loss_history.push_back(loss);
            report.grad_norm_history.push_back(g.norm());
            report.converged = true;
            break;
        }
        trainer.step();
        report.loss_history.push_back(trainer.last_loss());
        report.grad_norm_history.push_back(trainer.last_grad_norm());
        report.epochs_run = epoch + 1;
    }
    report.final_params = ParamVector{p.model().layout(), trainer.params()};
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

namespace {

// Newton on theta with an explicit d_out*N x d_theta Jacobian.
Vec fit_primal(const Predictor& lin, const LabeledDataset& ds, const RiskConfig& cfg) {
    const Risk risk(lin, ds, cfg);
    const Mat J = lin.model().stacked_jacobian(lin.reference(), ds.features);
    const double n = static_cast<double>(ds.size());
    const Index d = ds.output_dim();
    Vec theta = risk.center();
    for (int it = 0; it < 100; ++it) {
        Vec g;
        const double f0 = risk.value_and_grad(theta, g);
        const Mat F = risk.batch().outputs(theta);
        Mat H = cfg.lambda * Mat::Identity(theta.size(), theta.size());
        Mat BJ(J.rows(), J.cols());
        for (Index i = 0; i < ds.size(); ++i) {
            BJ.middleRows(i * d, d) = loss_hess_out(cfg.loss, F.col(i), risk.targets().col(i)) * J.middleRows(i * d, d);
        }
        H.noalias() += J.transpose() * BJ / n;
        const Vec step = -Eigen::LLT<Mat>(H).solve(g);
        double t = 1.0;
        while (cfg.loss != LossKind::squared && t > 1e-12 && risk.value(theta + t * step) > f0) t *= 0.5;
        theta += t * step;
        if (cfg.loss == LossKind::squared || step.norm() * t <= 1e-13 * (1.0 + theta.norm())) break;
    }
    return theta;
}

// Newton on a with theta = c + J^T a, working only with the Gram matrix.
Vec fit_dual(const Predictor& lin, const LabeledDataset& ds, const RiskConfig& cfg) {
    const Risk risk(lin, ds, cfg);
    const Mlp& model = lin.model();
    const Tape& tape = risk.batch().tape_at(lin.reference());
    const Mat K = empirical_ntk(model, lin.reference(), ds.features).storage();
    const Index d = ds.output_dim();
    const double n = static_cast<double>(ds.size());
    const Mat& Y = risk.targets();
    // outputs at theta = c
    const Mat base = risk.batch().outputs(risk.center());
    Vec a = Vec::Zero(K.rows());
    auto objective = [&](const Vec& coeffs, const Vec& Ka) {
        Mat F = base + unflatten(Ka, d);
        return loss_values(cfg.loss, F, Y).mean() + 0.5 * cfg.lambda * coeffs.dot(Ka);
    };
    for (int it = 0; it < 100; ++it) {
        const Vec Ka = K * a;
        const Mat F = base + unflatten(Ka, d);
        const Mat G = loss_grads(cfg.loss, F, Y);
        const Vec r = flatten(G) / n + cfg.lambda * a;
        Mat A = cfg.lambda * Mat::Identity(K.rows(), K.rows());
        for (Index i = 0; i < ds.size(); ++i) {
            A.middleRows(i * d, d).noalias() += loss_hess_out(cfg.loss, F.col(i), Y.col(i)) * K.middleRows(i * d, d) / n;
        }
        const Vec step = -A.partialPivLu().solve(r);
        double t = 1.0;
        if (cfg.loss != LossKind::squared) {
            const double f0 = objective(a, Ka);
            while (t > 1e-12) {
                const Vec trial = a + t * step;
                if (objective(trial, K * trial) <= f0) break;
                t *= 0.5;
            }
        }
        a += t * step;
        if (cfg.loss == LossKind::squared || step.norm() * t <= 1e-13 * (1.0 + a.norm())) break;
    }
    return risk.center() + model.vjp(tape, unflatten(a, d));
}

}  // namespace

ParamVector fit_linearized(const Predictor& lin, const LabeledDataset& ds, const RiskConfig& cfg) {
    if (!lin.is_linearized()) throw ConfigError("fit_linearized needs a linearized predictor");
    cfg.validate();
    if (ds.size() < 1) throw EmptyDataset("fit on an empty dataset");
    const Index gram = ds.size() * ds.output_dim();
    Vec theta = lin.param_count() < gram ? fit_primal(lin, ds, cfg) : fit_dual(lin, ds, cfg);
    if (!theta.allFinite()) throw NonFiniteEncountered("linearized fit produced non-finite parameters");
    return ParamVector{lin.model().layout(), std::move(theta)};
}

}  // namespace kinf

#pragma once

#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "kinf/data.hpp"
#include "kinf/loss.hpp"
#include "kinf/model.hpp"

namespace kinf {

// A network used either as is or through its first-order expansion around
// `reference`. The reference point doubles as the regularisation centre.
class Predictor {
public:
    static Predictor network(Mlp model, Vec reference);
    static Predictor linearized(Mlp model, Vec reference);

    const Mlp& model() const { return model_; }
    const Vec& reference() const { return reference_; }
    bool is_linearized() const { return linearized_; }
    Index param_count() const { return model_.param_count(); }

private:
    Predictor(Mlp model, Vec reference, bool linearized);

    Mlp model_;
    Vec reference_;
    bool linearized_ = false;
};

// Predictor bound to one input batch. For linearized predictors the tape at
// the reference point is recorded once; for networks the last tape is reused
// while theta stays the same.
class BatchModel {
public:
    BatchModel(Predictor predictor, const Mat& X);

    const Predictor& predictor() const { return predictor_; }
    Index points() const { return points_; }

    Mat outputs(const Vec& theta) const;
    Mat jvp(const Vec& theta, const Vec& v) const;
    Vec vjp(const Vec& theta, const Mat& cotangent) const;
    // Curvature of the network itself; identically zero when linearized.
    Vec vjp_derivative(const Vec& theta, const Mat& cotangent, const Vec& v) const;
    // Row k of the Jacobian of point i, written into a d_out x d_theta matrix.
    Mat point_jacobian(const Vec& theta, Index i) const;

    const Tape& tape_at(const Vec& theta) const;

private:
    Predictor predictor_;
    Mat X_;
    Index points_ = 0;
    std::optional<Tape> reference_tape_;
    mutable std::optional<Tape> cache_;
};

enum class Center { reference, origin };

struct RiskConfig {
    double lambda = 0.1;
    Center center = Center::reference;
    LossKind loss = LossKind::squared;

    void validate() const;
};

// L(theta) = (1/N) sum_i [ loss(f(x_i), y_i) + lambda/2 |theta - c|^2 ]
class Risk {
public:
    Risk(const Predictor& predictor, const LabeledDataset& ds, RiskConfig cfg);

    Index size() const { return batch_.points(); }
    const RiskConfig& config() const { return cfg_; }
    const BatchModel& batch() const { return batch_; }
    const Mat& targets() const { return Y_; }  // d_out x N
    const Vec& center() const { return center_; }

    double value(const Vec& theta) const;
    Vec grad(const Vec& theta) const;
    double value_and_grad(const Vec& theta, Vec& grad) const;
    Vec hvp(const Vec& theta, const Vec& v) const;

    // Hessian at a fixed point with the loss curvature cached.
    std::function<Vec(const Vec&)> hessian_at(const Vec& theta) const;
    // diag of (1/N) J^T B J + lambda; network curvature terms are left out.
    Vec gauss_newton_diagonal(const Vec& theta) const;

private:
    BatchModel batch_;
    Mat Y_;
    RiskConfig cfg_;
    Vec center_;
};

double risk_value(const Predictor& p, const Vec& theta, const LabeledDataset& ds, const RiskConfig& cfg);
Vec risk_grad(const Predictor& p, const Vec& theta, const LabeledDataset& ds, const RiskConfig& cfg);
Vec risk_hvp(const Predictor& p, const Vec& theta, const LabeledDataset& ds, const RiskConfig& cfg, const Vec& v);

struct GradientDescent {
    double lr = 0.1;
};
struct Momentum {
    double lr = 0.1;
    double beta = 0.9;
};
using Optimizer = std::variant<GradientDescent, Momentum>;

struct StopCriteria {
    int max_epochs = 1000;
    double grad_tol = 1e-10;
};

struct TrainReport {
    ParamVector final_params;
    int epochs_run = 0;
    std::vector<double> grad_norm_history;
    std::vector<double> loss_history;
    double wall_time = 0.0;
    bool converged = false;
};

// One optimiser step per call; loss and gradient norm are those seen before
// the update.
class Trainer {
public:
    Trainer(const Risk& risk, Optimizer opt, Vec theta0);

    void step();
    const Vec& params() const { return theta_; }
    double last_loss() const { return loss_; }
    double last_grad_norm() const { return grad_norm_; }

private:
    const Risk& risk_;
    Optimizer opt_;
    Vec theta_;
    Vec velocity_;
    double loss_ = 0.0;
    double grad_norm_ = 0.0;
    double first_loss_ = -1.0;
};

TrainReport train(const Predictor& p, const LabeledDataset& ds, const RiskConfig& cfg, const Optimizer& opt,
                  const StopCriteria& stop, std::optional<Vec> theta0 = std::nullopt);

// Exact minimiser of the linearized risk by Newton's method in whichever of
// parameter space or the d_out*N Gram space is smaller. Squared loss needs a
// single step.
ParamVector fit_linearized(const Predictor& lin, const LabeledDataset& ds, const RiskConfig& cfg);

}  // namespace kinf

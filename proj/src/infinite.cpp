#include "kinf/infinite.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kinf/dual.hpp"
#include "kinf/errors.hpp"

namespace kinf {

void AnalyticNtkSpec::validate() const {
    if (hidden_layers < 0) throw ConfigError("hidden_layers must be nonnegative");
    if (!(sigma_w2 > 0.0) || sigma_b2 < 0.0) throw ConfigError("need sigma_w2 > 0 and sigma_b2 >= 0");
    if (d_out < 1) throw ConfigError("d_out must be positive");
}

Mat analytic_ntk_base(const AnalyticNtkSpec& spec, const Mat& X1, const Mat& X2) {
    spec.validate();
    if (X1.rows() < 1 || X2.rows() < 1) throw DimensionMismatch("analytic_ntk needs nonempty inputs");
    if (X1.cols() != X2.cols()) throw DimensionMismatch("analytic_ntk inputs differ in dimension");
    const double pi = std::numbers::pi;
    const double din = static_cast<double>(X1.cols());
    const double sw = spec.sigma_w2;
    const double sb = spec.sigma_b2;

    Mat S = (sw / din) * (X1 * X2.transpose());
    S.array() += sb;
    Vec v1 = (sw / din) * X1.rowwise().squaredNorm();
    Vec v2 = (sw / din) * X2.rowwise().squaredNorm();
    v1.array() += sb;
    v2.array() += sb;
    Mat theta_k = S;
    for (int h = 0; h < spec.hidden_layers; ++h) {
        Mat S_next(S.rows(), S.cols());
        Mat S_dot(S.rows(), S.cols());
        for (Index j = 0; j < S.cols(); ++j) {
            for (Index i = 0; i < S.rows(); ++i) {
                const double norm = std::sqrt(v1(i) * v2(j));
                const double rho = std::clamp(S(i, j) / norm, -1.0, 1.0);
                const double angle = std::acos(rho);
                S_next(i, j) = sw * norm * (std::sin(angle) + (pi - angle) * std::cos(angle)) / (2.0 * pi) + sb;
                S_dot(i, j) = sw * (pi - angle) / (2.0 * pi);
            }
        }
        theta_k = S_next + S_dot.cwiseProduct(theta_k);
        S = std::move(S_next);
        // at zero angle the recursion gives sw/2 * v + sb
        v1 = (0.5 * sw * v1).array() + sb;
        v2 = (0.5 * sw * v2).array() + sb;
    }
    return theta_k;
}

KernelMatrix analytic_ntk(const AnalyticNtkSpec& spec, const Mat& X1, const Mat& X2) {
    KernelSource src;
    src.kind = KernelKind::analytic;
    src.depth = spec.hidden_layers;
    src.sigma_w2 = spec.sigma_w2;
    src.sigma_b2 = spec.sigma_b2;
    return KernelMatrix::kronecker(analytic_ntk_base(spec, X1, X2), spec.d_out, src);
}

KernelMatrix analytic_ntk(const AnalyticNtkSpec& spec, const Mat& X) {
    KernelMatrix K = analytic_ntk(spec, X, X);
    Mat sym = 0.5 * (K.storage() + K.storage().transpose());
    return KernelMatrix::kronecker(std::move(sym), K.d_out(), K.source());
}

FunctionState kgd_train(const KernelMatrix& K, const LabeledDataset& ds, const RiskConfig& cfg,
                        const KgdOptions& opts) {
    cfg.validate();
    if (!(opts.lr > 0.0)) throw ConfigError("kgd learning rate must be positive");
    if (opts.epochs < 0) throw ConfigError("kgd epochs must be nonnegative");
    if (ds.size() < 1) throw EmptyDataset("kgd on an empty dataset");
    if (K.row_points() != ds.size() || K.col_points() != ds.size() || K.d_out() != ds.output_dim()) {
        throw DimensionMismatch("kernel does not match the training set");
    }
    const Index d = ds.output_dim();
    const double n = static_cast<double>(ds.size());
    const Mat Y = ds.targets.transpose();

    FunctionState st;
    st.f0_train = Vec::Zero(d * ds.size());
    st.f_train = st.f0_train;
    st.coeffs = Vec::Zero(st.f_train.size());

    auto gradient = [&](const Vec& f) -> Vec {
        return flatten(loss_grads(cfg.loss, unflatten(f, d), Y)) / n;
    };
    double first = -1.0;
    for (int k = 0;; ++k) {
        const Vec g = gradient(st.f_train);
        const Vec step = K.multiply(g) + cfg.lambda * (st.f_train - st.f0_train);
        st.stationarity_residual = step.norm();
        const double objective = loss_values(cfg.loss, unflatten(st.f_train, d), Y).mean() +
                                 0.5 * cfg.lambda * st.coeffs.dot(st.f_train - st.f0_train);
        st.objective_history.push_back(objective);
        if (first < 0.0) first = objective;
        if (!std::isfinite(objective) || !std::isfinite(st.stationarity_residual) || objective > 1e12 * (1.0 + first)) {
            throw DivergenceDetected("kernel gradient descent diverged at epoch " + std::to_string(k));
        }
        if (k >= opts.epochs || st.stationarity_residual <= opts.tol) break;
        st.f_train -= opts.lr * step;
        st.coeffs -= opts.lr * (g + cfg.lambda * st.coeffs);
        st.epoch = k + 1;
    }
    return st;
}

Vec function_alpha_star(const FunctionState& state, const LabeledDataset& ds, const RiskConfig& cfg, double tol) {
    if (!(state.stationarity_residual <= tol)) {
        throw NotConverged("function-space stationarity residual " + std::to_string(state.stationarity_residual) +
                           " is above " + std::to_string(tol));
    }
    return alpha_from_outputs(unflatten(state.f_train, ds.output_dim()), ds.targets.transpose(), cfg);
}

Mat infinite_predict(const KernelMatrix& K_tX, const Vec& alpha_star, const Mat& f0_test) {
    if (alpha_star.size() != K_tX.cols() || f0_test.rows() != K_tX.d_out() || f0_test.cols() != K_tX.row_points()) {
        throw DimensionMismatch("infinite_predict: kernel, coefficients and f0 shapes disagree");
    }
    return unflatten(K_tX.multiply(alpha_star), K_tX.d_out()) + f0_test;
}

InfiniteInfluence infinite_influence(const KernelMatrix& K_train, const KernelMatrix& K_test,
                                     const SplitDataset& split, const LabeledDataset& test, const RiskConfig& cfg,
                                     const KgdOptions& kgd, const CgOptions& cg, double stationarity_tol) {
    const Index nf = split.forget_count;
    const Index n = split.full.size();
    const Index nr = n - nf;
    if (nf <= 0 || nr <= 0) throw DegenerateSplit("forget and retain sets must both be nonempty");
    if (K_test.col_points() != n || K_test.row_points() != test.size()) {
        throw DimensionMismatch("test kernel must be N_test x N_train in points");
    }
    const Index d = K_train.d_out();
    InfiniteInfluence out;

    out.full_state = kgd_train(K_train, split.full, cfg, kgd);
    const Vec alpha = function_alpha_star(out.full_state, split.full, cfg, stationarity_tol);

    const LabeledDataset retain = split.retain_set();
    const KernelMatrix K_rr = K_train.slice(nf, nr, nf, nr);
    out.retain_state = kgd_train(K_rr, retain, cfg, kgd);
    const Vec alpha_r = function_alpha_star(out.retain_state, retain, cfg, stationarity_tol);

    const Mat Y_t = test.targets.transpose();
    const Mat f0_t = Mat::Zero(d, test.size());
    const Mat F_full = infinite_predict(K_test, alpha, f0_t);
    const Mat F_retain = infinite_predict(K_test.slice(0, test.size(), nf, nr), alpha_r, f0_t);

    out.actual.output_change = F_retain - F_full;
    out.actual.loss_change_raw = loss_values(cfg.loss, F_retain, Y_t) - loss_values(cfg.loss, F_full, Y_t);
    const double norm_full = alpha.dot(K_train.multiply(alpha));
    const double norm_retain = alpha_r.dot(K_rr.multiply(alpha_r));
    out.actual.loss_change_regularized =
        out.actual.loss_change_raw.array() + 0.5 * cfg.lambda * (norm_retain - norm_full);

    const DualSystem sys(K_train, unflatten(out.full_state.f_train, d), split.full.targets.transpose(), nf, cfg);
    out.solve = sys.solve_reduced(cg);
    out.estimated = predict_changes_dual(K_test, K_train, out.solve.coefficients.delta_alpha, sys.alpha_star(), F_full,
                                         Y_t, cfg);
    return out;
}

}  // namespace kinf

#include <gtest/gtest.h>

#include <algorithm>

#include "helpers.hpp"
#include "kinf/errors.hpp"
#include "kinf/infinite.hpp"

using namespace kinf;
using namespace kinf::testing;

namespace {

// average empirical NTK of ntk-parameterised relu nets over seeds
Mat monte_carlo_ntk(Index width, int hidden, int seeds, const Mat& X) {
    Mat acc = Mat::Zero(X.rows(), X.rows());
    for (int s = 0; s < seeds; ++s) {
        ModelSpec spec;
        spec.widths.push_back(X.cols());
        for (int l = 0; l < hidden; ++l) spec.widths.push_back(width);
        spec.widths.push_back(1);
        spec.init_seed = 1000 + static_cast<std::uint64_t>(s);
        const Mlp net(spec);
        acc += empirical_ntk(net, net.init_params().values, X).storage();
    }
    return acc / seeds;
}

double median_abs_rel_dev(const Mat& a, const Mat& b) {
    std::vector<double> d;
    for (Index j = 0; j < a.cols(); ++j)
        for (Index i = 0; i <= j; ++i) d.push_back(std::abs(a(i, j) - b(i, j)) / std::abs(b(i, j)));
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return d[d.size() / 2];
}

LabeledDataset two_class(Index per_class, std::uint64_t seed) {
    return make_blobs(2, per_class, 5, 0.2, seed, TargetEncoding::plus_minus_one);
}

}  // namespace

TEST(AnalyticNtk, NoHiddenLayerIsLinearKernel) {
    const Mat X = random_mat(4, 3, 1);
    AnalyticNtkSpec spec{0, 2.0, 0.01, 1};
    Mat expected = 2.0 * X * X.transpose() / 3.0;
    expected.array() += 0.01;
    EXPECT_LT(rel_err(analytic_ntk_base(spec, X, X), expected), 1e-15);
}

TEST(AnalyticNtk, DiagonalPositiveAndSymmetricPsd) {
    const Mat X = random_mat(12, 4, 2).cwiseAbs();
    for (int L : {1, 2, 3, 5}) {
        const KernelMatrix K = analytic_ntk(AnalyticNtkSpec{L, 2.0, 0.01, 2}, X);
        EXPECT_TRUE(K.structured());
        EXPECT_EQ(K.rows(), 24);
        EXPECT_GT(K.storage().diagonal().minCoeff(), 0.0);
        EXPECT_TRUE(K.storage() == K.storage().transpose());
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat>(K.storage()).eigenvalues().minCoeff(),
                  -1e-8 * K.trace() / double(K.rows()));
    }
    // identical inputs: the angle is zero at every layer, so the closed form is the diagonal recursion
    const Mat x = Mat::Constant(2, 4, 0.5);
    const Mat K = analytic_ntk_base(AnalyticNtkSpec{2, 2.0, 0.0, 1}, x, x);
    EXPECT_NEAR(K(0, 1), K(0, 0), 1e-14);
    // sigma_b = 0, sigma_w2 = 2 keeps the variance fixed: Theta^L = (L+1) * Sigma^0
    EXPECT_NEAR(K(0, 0), 3.0 * 2.0 * 0.25, 1e-14);
}

TEST(AnalyticNtk, Errors) {
    EXPECT_THROW(analytic_ntk_base(AnalyticNtkSpec{-1}, Mat::Ones(1, 2), Mat::Ones(1, 2)), ConfigError);
    EXPECT_THROW(analytic_ntk_base(AnalyticNtkSpec{}, Mat::Ones(1, 2), Mat::Ones(1, 3)), DimensionMismatch);
    EXPECT_THROW(analytic_ntk_base(AnalyticNtkSpec{}, Mat(0, 2), Mat::Ones(1, 2)), DimensionMismatch);
}

TEST(AnalyticNtk, MonteCarloConvergesWithWidth) {
    const Mat X = random_mat(6, 4, 3).cwiseAbs();
    const Mat exact = analytic_ntk_base(AnalyticNtkSpec{2, 2.0, 0.01, 1}, X, X);
    const double narrow = median_abs_rel_dev(monte_carlo_ntk(64, 2, 4, X), exact);
    const double wide = median_abs_rel_dev(monte_carlo_ntk(4096, 2, 4, X), exact);
    EXPECT_LT(wide, narrow);
    EXPECT_LT(wide, 0.02);
}

TEST(Kgd, ZeroTargetsIsFixedPoint) {
    LabeledDataset ds = two_class(4, 1);
    ds.targets.setZero();
    const KernelMatrix K = analytic_ntk(AnalyticNtkSpec{3, 2.0, 0.01, 1}, ds.features);
    const FunctionState st = kgd_train(K, ds, RiskConfig{0.1}, KgdOptions{0.5, 10, 0.0});
    EXPECT_EQ(st.f_train.norm(), 0.0);
    EXPECT_EQ(st.stationarity_residual, 0.0);
}

TEST(Kgd, SquaredLossClosedForm) {
    const LabeledDataset ds = two_class(15, 2);
    const KernelMatrix K = analytic_ntk(AnalyticNtkSpec{3, 2.0, 0.01, 1}, ds.features);
    const RiskConfig cfg{0.1, Center::reference, LossKind::squared};
    const FunctionState st = kgd_train(K, ds, cfg, KgdOptions{0.5, 5000, 1e-13});
    const double n = double(ds.size());
    const Mat Ke = K.expanded();
    const Vec closed = (Ke / n + cfg.lambda * Mat::Identity(ds.size(), ds.size())).ldlt().solve(Ke / n * ds.targets.col(0));
    EXPECT_LT(rel_err(st.f_train, closed), 1e-6);
    EXPECT_LT(st.stationarity_residual, 1e-12);
    // objective never increases
    for (std::size_t k = 1; k < st.objective_history.size(); ++k) {
        EXPECT_LE(st.objective_history[k], st.objective_history[k - 1] * (1 + 1e-15));
    }
}

TEST(Kgd, CrossEntropyDescent) {
    const LabeledDataset ds = make_blobs(3, 6, 5, 0.2, 3);
    const KernelMatrix K = analytic_ntk(AnalyticNtkSpec{2, 2.0, 0.01, 3}, ds.features);
    const FunctionState st = kgd_train(K, ds, RiskConfig{0.1, Center::reference, LossKind::cross_entropy},
                                       KgdOptions{0.5, 3000, 1e-10});
    for (std::size_t k = 1; k < st.objective_history.size(); ++k) {
        EXPECT_LE(st.objective_history[k], st.objective_history[k - 1] * (1 + 1e-15));
    }
    EXPECT_LT(st.stationarity_residual, 1e-10);
}

TEST(Kgd, UpdateMatchesFunctionalGradientOnThreePoints) {
    Mat Kb(3, 3);
    Kb << 2.0, 0.5, 0.1, 0.5, 1.5, 0.3, 0.1, 0.3, 1.0;
    const KernelMatrix K = KernelMatrix::kronecker(Kb, 1, {});
    LabeledDataset ds = two_class(2, 4).slice(0, 3);
    ds.targets << 1.0, -1.0, 1.0;
    const RiskConfig cfg{0.2, Center::reference, LossKind::squared};
    const double lr = 0.3;
    const FunctionState one = kgd_train(K, ds, cfg, KgdOptions{lr, 1, 0.0});
    const FunctionState two = kgd_train(K, ds, cfg, KgdOptions{lr, 2, 0.0});
    // step 1 from f = 0: f1 = -lr * K (f0 - y)/3
    Vec f1(3);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += Kb(i, j) * (0.0 - ds.targets(j, 0)) / 3.0;
        f1(i) = -lr * s;
    }
    EXPECT_LT(rel_err(one.f_train, f1), 1e-15);
    Vec f2(3);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += Kb(i, j) * (f1(j) - ds.targets(j, 0)) / 3.0;
        f2(i) = f1(i) - lr * (s + cfg.lambda * f1(i));
    }
    EXPECT_LT(rel_err(two.f_train, f2), 1e-15);
}

TEST(Kgd, DivergesWithLargeStep) {
    const LabeledDataset ds = two_class(5, 2);
    const KernelMatrix K = analytic_ntk(AnalyticNtkSpec{3, 2.0, 0.01, 1}, ds.features);
    EXPECT_THROW(kgd_train(K, ds, RiskConfig{0.1}, KgdOptions{100.0, 5000, 0.0}), DivergenceDetected);
}

TEST(InfinitePredict, ZeroCoefficientsAndSinglePoint) {
    const Mat Kt = Mat::Constant(2, 1, 0.7);
    const KernelMatrix km = KernelMatrix::kronecker(Kt, 1, {});
    EXPECT_EQ(infinite_predict(km, Vec::Zero(1), Mat::Zero(1, 2)).norm(), 0.0);

    // one training point: f* = k y / (k + lambda N), alpha* = y / (k + lambda)
    LabeledDataset ds = two_class(1, 3).slice(0, 1);
    const double y = ds.targets(0, 0);
    const AnalyticNtkSpec spec{2, 2.0, 0.01, 1};
    const KernelMatrix K = analytic_ntk(spec, ds.features);
    const double k = K.storage()(0, 0);
    const RiskConfig cfg{0.1};
    const FunctionState st = kgd_train(K, ds, cfg, KgdOptions{0.5, 5000, 1e-14});
    const Vec alpha = function_alpha_star(st, ds, cfg);
    EXPECT_NEAR(alpha(0), y / (k + cfg.lambda), 1e-12);
    const Mat xt = Mat::Constant(1, 5, 0.3);
    const KernelMatrix Kt1 = analytic_ntk(spec, xt, ds.features);
    EXPECT_NEAR(infinite_predict(Kt1, alpha, Mat::Zero(1, 1))(0, 0), Kt1.storage()(0, 0) * y / (k + cfg.lambda), 1e-12);
}

TEST(InfinitePredict, ReproducesTrainingOutputsAndChecksConvergence) {
    const LabeledDataset ds = make_blobs(3, 5, 5, 0.2, 9);
    const KernelMatrix K = analytic_ntk(AnalyticNtkSpec{3, 2.0, 0.01, 3}, ds.features);
    const RiskConfig cfg{0.1, Center::reference, LossKind::cross_entropy};
    const FunctionState st = kgd_train(K, ds, cfg, KgdOptions{0.5, 10000, 1e-12});
    const Vec alpha = function_alpha_star(st, ds, cfg);
    const Mat pred = infinite_predict(K, alpha, Mat::Zero(3, ds.size()));
    EXPECT_LT(rel_err(Vec(flatten(pred)), st.f_train), 1e-8);
    const FunctionState early = kgd_train(K, ds, cfg, KgdOptions{0.5, 3, 0.0});
    EXPECT_THROW(function_alpha_star(early, ds, cfg), NotConverged);
}

TEST(InfiniteInfluence, ZeroResidualPointHasZeroForgetCoefficient) {
    const LabeledDataset base = two_class(6, 5);
    const AnalyticNtkSpec spec{3, 2.0, 0.01, 1};
    const RiskConfig cfg{0.1, Center::reference, LossKind::squared};
    const KernelMatrix K = analytic_ntk(spec, base.features);
    const double n = double(base.size());
    const Mat Ke = K.expanded();
    const Mat M = (Ke / n + cfg.lambda * Mat::Identity(base.size(), base.size())).ldlt().solve(Ke / n);
    // choose y_0 so that the fitted value at point 0 equals its target
    LabeledDataset ds = base;
    const Vec y_rest = base.targets.col(0).tail(base.size() - 1);
    ds.targets(0, 0) = M.row(0).tail(base.size() - 1).dot(y_rest) / (1.0 - M(0, 0));
    const SplitDataset split{ds, 1, {}};
    const LabeledDataset test = two_class(3, 77);
    const KernelMatrix Kt = analytic_ntk(spec, test.features, ds.features);
    const InfiniteInfluence r = infinite_influence(K, Kt, split, test, cfg, KgdOptions{0.5, 20000, 1e-13}, CgOptions{});
    const DualCoefficients& c = r.solve.coefficients;
    EXPECT_LT(std::abs(c.alpha_star(0)), 1e-9);
    EXPECT_LT(c.forget_block().cwiseAbs().maxCoeff(), 1e-9);
    // the mean over retained points is renormalised, so the retain solution still moves
    EXPECT_GT(r.actual.output_change.norm(), 1e-6);
    EXPECT_LT(rel_err(r.estimated.output_change, r.actual.output_change), 1e-7);
}

TEST(InfiniteInfluence, StructuredEqualsExpandedAndTracksActual) {
    const LabeledDataset ds = make_blobs(2, 20, 5, 0.2, 12);
    const SplitDataset split = split_forget(ds, 50, RemovalScope::all(), 1);
    const LabeledDataset test = make_blobs(2, 5, 5, 0.2, 13);
    const AnalyticNtkSpec spec{3, 2.0, 0.01, 2};
    const RiskConfig cfg{0.1, Center::reference, LossKind::squared};
    const KernelMatrix K = analytic_ntk(spec, split.full.features);
    const KernelMatrix Kt = analytic_ntk(spec, test.features, split.full.features);
    const KgdOptions kgd{0.5, 20000, 1e-12};
    CgOptions cg;
    cg.rel_tol = 1e-12;
    const InfiniteInfluence a = infinite_influence(K, Kt, split, test, cfg, kgd, cg);
    const InfiniteInfluence b = infinite_influence(K.as_dense(), Kt.as_dense(), split, test, cfg, kgd, cg);
    EXPECT_LT(rel_err(a.estimated.output_change, b.estimated.output_change), 1e-12);
    EXPECT_LT(rel_err(a.estimated.loss_change_raw, b.estimated.loss_change_raw), 1e-12);
    // squared loss is quadratic, so the output estimate is exact up to solver tolerance
    EXPECT_LT(rel_err(a.estimated.output_change, a.actual.output_change), 1e-8);
}

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "kinf/errors.hpp"
#include "kinf/training.hpp"

using namespace kinf;
using namespace kinf::testing;

namespace {

LabeledDataset blobs(int classes, Index per_class, Index d_in, std::uint64_t seed,
                     TargetEncoding enc = TargetEncoding::one_hot) {
    return make_blobs(classes, per_class, d_in, 0.15, seed, enc);
}

Predictor make_predictor(const ModelSpec& s, bool linearized) {
    Mlp net(s);
    Vec ref = net.init_params().values;
    return linearized ? Predictor::linearized(net, ref) : Predictor::network(net, ref);
}

// explicit (1/N) J^T B J + lambda I
Mat explicit_hessian(const Predictor& p, const LabeledDataset& ds, const RiskConfig& cfg, const Vec& theta) {
    const Mat J = p.model().stacked_jacobian(p.reference(), ds.features);
    const Mat F = BatchModel(p, ds.features).outputs(theta);
    const Mat Y = ds.targets.transpose();
    const Index d = ds.output_dim();
    Mat H = cfg.lambda * Mat::Identity(J.cols(), J.cols());
    for (Index i = 0; i < ds.size(); ++i) {
        const Mat Ji = J.middleRows(i * d, d);
        H += Ji.transpose() * loss_hess_out(cfg.loss, F.col(i), Y.col(i)) * Ji / double(ds.size());
    }
    return H;
}

}  // namespace

TEST(Risk, RegularizerOnlyWhenOutputsVanish) {
    const ModelSpec s = small_spec({3, 5, 1}, 2, Parameterization::standard);
    Mlp net(s);
    Vec theta = random_vec(s.param_count(), 1);
    theta.tail(6).setZero();  // last layer weights and bias
    LabeledDataset ds = blobs(2, 3, 3, 4, TargetEncoding::plus_minus_one);
    ds.targets.setZero();
    RiskConfig cfg{0.3, Center::origin, LossKind::squared};
    const Predictor p = Predictor::network(net, Vec::Zero(s.param_count()));
    EXPECT_NEAR(risk_value(p, theta, ds, cfg), 0.15 * theta.squaredNorm(), 1e-14);
}

TEST(Risk, EmptyDatasetAndBadLambda) {
    const ModelSpec s = small_spec({3, 4, 2}, 2);
    const Predictor p = make_predictor(s, false);
    LabeledDataset ds = blobs(2, 3, 3, 4);
    const LabeledDataset empty = ds.slice(0, 0);
    EXPECT_THROW(risk_value(p, p.reference(), empty, RiskConfig{}), EmptyDataset);
    EXPECT_THROW(risk_value(p, p.reference(), ds, RiskConfig{0.0}), ConfigError);
}

TEST(Risk, GradientMatchesFiniteDifferences) {
    for (int c = 0; c < 24; ++c) {
        const bool linearized = c % 2 == 0;
        const LossKind loss = (c / 2) % 2 == 0 ? LossKind::squared : LossKind::cross_entropy;
        const ModelSpec s = small_spec({3, 6, 6, 3}, 100 + c);
        const Predictor p = make_predictor(s, linearized);
        const LabeledDataset ds = blobs(3, 3, 3, 50 + c);
        const RiskConfig cfg{0.2, c % 3 == 0 ? Center::origin : Center::reference, loss};
        const Risk risk(p, ds, cfg);
        const Vec theta = p.reference() + random_vec(s.param_count(), 7 + c, 0.05);
        Vec v = random_vec(s.param_count(), 900 + c);
        v /= v.norm();
        const double g = risk.grad(theta).dot(v);
        const double h = 1e-5;
        const double fd = (risk.value(theta + h * v) - risk.value(theta - h * v)) / (2 * h);
        EXPECT_LT(std::abs(g - fd) / std::abs(fd), 1e-6) << "case " << c;
    }
}

TEST(Risk, HvpMatchesGradientDifferences) {
    for (int c = 0; c < 24; ++c) {
        const bool linearized = c % 2 == 0;
        const LossKind loss = (c / 2) % 2 == 0 ? LossKind::squared : LossKind::cross_entropy;
        const ModelSpec s = small_spec({3, 6, 6, 2}, 200 + c);
        const Predictor p = make_predictor(s, linearized);
        const LabeledDataset ds = blobs(2, 4, 3, 60 + c);
        const RiskConfig cfg{0.1, Center::reference, loss};
        const Risk risk(p, ds, cfg);
        const Vec theta = p.reference() + random_vec(s.param_count(), 17 + c, 0.05);
        Vec v = random_vec(s.param_count(), 300 + c);
        v /= v.norm();
        const Vec hv = risk.hvp(theta, v);
        const Vec fd = central_diff([&](const Vec& t) { return risk.grad(t); }, theta, v, 1e-5);
        EXPECT_LT(rel_err(hv, fd), 1e-6) << "case " << c;
    }
}

TEST(Risk, HvpZeroDirectionAndExplicitGram) {
    const ModelSpec s = small_spec({3, 10, 2}, 5);
    const Predictor p = make_predictor(s, true);
    const LabeledDataset ds = blobs(2, 5, 3, 9);
    const RiskConfig cfg{0.1, Center::reference, LossKind::squared};
    const Vec theta = p.reference() + random_vec(s.param_count(), 1, 0.1);
    EXPECT_EQ(risk_hvp(p, theta, ds, cfg, Vec::Zero(s.param_count())).norm(), 0.0);
    const Mat H = explicit_hessian(p, ds, cfg, theta);
    for (int t = 0; t < 5; ++t) {
        const Vec v = random_vec(s.param_count(), 40 + t);
        EXPECT_LT(rel_err(risk_hvp(p, theta, ds, cfg, v), Vec(H * v)), 1e-12);
    }
    EXPECT_THROW(risk_hvp(p, theta, ds, cfg, Vec::Zero(3)), DimensionMismatch);
}

TEST(Risk, HvpSymmetry) {
    for (bool linearized : {true, false}) {
        const ModelSpec s = small_spec({4, 8, 8, 3}, 6);
        const Predictor p = make_predictor(s, linearized);
        const LabeledDataset ds = blobs(3, 4, 4, 10);
        const RiskConfig cfg{0.05, Center::reference, LossKind::cross_entropy};
        const Risk risk(p, ds, cfg);
        const Vec theta = p.reference() + random_vec(s.param_count(), 3, 0.05);
        const auto H = risk.hessian_at(theta);
        for (int t = 0; t < 20; ++t) {
            const Vec u = random_vec(s.param_count(), 500 + t);
            const Vec v = random_vec(s.param_count(), 600 + t);
            const double a = u.dot(H(v)), b = v.dot(H(u));
            EXPECT_LT(std::abs(a - b) / std::abs(a), 1e-10);
        }
    }
}

TEST(Risk, StrictConvexityOfLinearizedRisk) {
    const ModelSpec s = small_spec({3, 12, 2}, 8);
    const Predictor p = make_predictor(s, true);
    const LabeledDataset ds = blobs(2, 6, 3, 3);
    const RiskConfig cfg{0.07, Center::reference, LossKind::cross_entropy};
    const Mat H = explicit_hessian(p, ds, cfg, p.reference());
    const double min_eig = Eigen::SelfAdjointEigenSolver<Mat>(H).eigenvalues().minCoeff();
    EXPECT_GE(min_eig, cfg.lambda * (1 - 1e-10));
}

TEST(Risk, GaussNewtonDiagonalMatchesExplicit) {
    const ModelSpec s = small_spec({3, 7, 3}, 8);
    const Predictor p = make_predictor(s, true);
    const LabeledDataset ds = blobs(3, 3, 3, 3);
    const RiskConfig cfg{0.2, Center::reference, LossKind::cross_entropy};
    const Vec theta = p.reference() + random_vec(s.param_count(), 2, 0.1);
    const Risk risk(p, ds, cfg);
    EXPECT_LT(rel_err(risk.gauss_newton_diagonal(theta), Vec(explicit_hessian(p, ds, cfg, theta).diagonal())), 1e-12);
}

TEST(Train, OnePointRidgeClosedForm) {
    const ModelSpec s = small_spec({1, 1}, 0, Parameterization::standard, Activation::identity);
    Mlp net(s);
    LabeledDataset ds;
    ds.features = Mat::Constant(1, 1, 0.8);
    ds.targets = Mat::Constant(1, 1, 1.0);
    ds.labels = {1};
    ds.classes = {1, 0};
    ds.encoding = TargetEncoding::plus_minus_one;
    const RiskConfig cfg{0.1, Center::origin, LossKind::squared};
    const Predictor p = Predictor::network(net, Vec::Zero(2));
    const TrainReport rep = train(p, ds, cfg, GradientDescent{0.2}, StopCriteria{100000, 1e-13});
    Vec a(2);
    a << 0.8, 1.0;
    const Vec ridge = (a * a.transpose() + cfg.lambda * Mat::Identity(2, 2)).ldlt().solve(a * 1.0);
    EXPECT_TRUE(rep.converged);
    EXPECT_LT(rel_err(rep.final_params.values, ridge), 1e-10);
    // heavy-ball reaches the same point
    const TrainReport mom = train(p, ds, cfg, Momentum{0.05, 0.9}, StopCriteria{100000, 1e-13});
    EXPECT_LT(rel_err(mom.final_params.values, ridge), 1e-10);
}

TEST(Train, StepAboveStabilityBoundDiverges) {
    const ModelSpec s = small_spec({1, 1}, 0, Parameterization::standard, Activation::identity);
    LabeledDataset ds;
    ds.features = Mat::Constant(1, 1, 0.8);
    ds.targets = Mat::Constant(1, 1, 1.0);
    ds.labels = {1};
    ds.classes = {1, 0};
    ds.encoding = TargetEncoding::plus_minus_one;
    const RiskConfig cfg{0.1, Center::origin, LossKind::squared};
    const double L = 0.8 * 0.8 + 1.0 + cfg.lambda;
    const Predictor p = Predictor::network(Mlp(s), Vec::Zero(2));
    EXPECT_THROW(train(p, ds, cfg, GradientDescent{3.0 / L}, StopCriteria{100000, 1e-12}), DivergenceDetected);
    EXPECT_THROW(train(p, ds, cfg, GradientDescent{-1.0}, StopCriteria{10, 1e-12}), ConfigError);
}

TEST(Train, LinearizedTrainingMatchesDirectSolve) {
    for (auto loss : {LossKind::squared, LossKind::cross_entropy}) {
        for (Index width : {4, 40}) {  // parameter-space and Gram-space direct solves
            const ModelSpec s = small_spec({3, width, 2}, 31);
            const Predictor p = make_predictor(s, true);
            const LabeledDataset ds = blobs(2, 8, 3, 12);
            const RiskConfig cfg{0.5, Center::reference, loss};
            const ParamVector direct = fit_linearized(p, ds, cfg);
            const TrainReport rep = train(p, ds, cfg, Momentum{0.1, 0.9}, StopCriteria{200000, 1e-12});
            EXPECT_TRUE(rep.converged);
            EXPECT_LT(rel_err(rep.final_params.values - p.reference(), direct.values - p.reference()), 1e-8);
            EXPECT_LT(Risk(p, ds, cfg).grad(direct.values).norm(), 1e-10);
        }
    }
}

TEST(Train, GradNormMonotoneAtTheEndForQuadratics) {
    const ModelSpec s = small_spec({3, 16, 1}, 4);
    const Predictor p = make_predictor(s, true);
    const LabeledDataset ds = blobs(2, 10, 3, 6, TargetEncoding::plus_minus_one);
    const RiskConfig cfg{0.1, Center::reference, LossKind::squared};
    const TrainReport rep = train(p, ds, cfg, GradientDescent{0.05}, StopCriteria{2000, 0.0});
    const auto& g = rep.grad_norm_history;
    ASSERT_EQ(g.size(), 2000u);
    for (std::size_t k = g.size() - 200; k + 1 < g.size(); ++k) EXPECT_LE(g[k + 1], g[k]);
}

TEST(Train, StrongerRegularizationConvergesFaster) {
    const ModelSpec s = small_spec({4, 64, 1}, 9);
    const Predictor p = make_predictor(s, false);
    const LabeledDataset ds = blobs(2, 20, 4, 21, TargetEncoding::plus_minus_one);
    auto final_grad = [&](double lambda) {
        const TrainReport rep = train(p, ds, RiskConfig{lambda, Center::reference, LossKind::squared},
                                      GradientDescent{0.1}, StopCriteria{1000, 0.0});
        return rep.grad_norm_history.back();
    };
    EXPECT_LT(final_grad(1.0), final_grad(1e-3));
}

TEST(Train, Deterministic) {
    const ModelSpec s = small_spec({4, 16, 2}, 9);
    const Predictor p = make_predictor(s, false);
    const LabeledDataset ds = blobs(2, 5, 4, 21);
    const RiskConfig cfg{0.1, Center::reference, LossKind::cross_entropy};
    const TrainReport a = train(p, ds, cfg, Momentum{0.1, 0.9}, StopCriteria{50, 0.0});
    const TrainReport b = train(p, ds, cfg, Momentum{0.1, 0.9}, StopCriteria{50, 0.0});
    EXPECT_TRUE(a.final_params.values == b.final_params.values);
    EXPECT_EQ(a.loss_history, b.loss_history);
}

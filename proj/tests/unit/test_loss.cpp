#include <gtest/gtest.h>

#include "helpers.hpp"
#include "kinf/errors.hpp"
#include "kinf/loss.hpp"

using namespace kinf;
using namespace kinf::testing;

TEST(Loss, SquaredAtTarget) {
    const Vec y = Vec::LinSpaced(3, -1.0, 1.0);
    EXPECT_EQ(loss_value(LossKind::squared, y, y), 0.0);
    EXPECT_EQ(loss_grad_out(LossKind::squared, y, y).norm(), 0.0);
    EXPECT_TRUE(loss_hess_out(LossKind::squared, y, y).isIdentity(0.0));
}

TEST(Loss, CrossEntropySymmetricPoint) {
    const Vec f = Vec::Zero(2);
    Vec y(2);
    y << 1.0, 0.0;
    const Vec g = loss_grad_out(LossKind::cross_entropy, f, y);
    EXPECT_DOUBLE_EQ(g(0), -0.5);
    EXPECT_DOUBLE_EQ(g(1), 0.5);
    EXPECT_NEAR(loss_value(LossKind::cross_entropy, f, y), std::log(2.0), 1e-15);
}

TEST(Loss, CrossEntropyLargeLogitsStayFinite) {
    Vec f(3);
    f << 800.0, -800.0, 0.0;
    Vec y(3);
    y << 0.0, 1.0, 0.0;
    EXPECT_NEAR(loss_value(LossKind::cross_entropy, f, y), 1600.0, 1e-9);
    EXPECT_TRUE(loss_grad_out(LossKind::cross_entropy, f, y).allFinite());
}

TEST(Loss, DerivativesMatchFiniteDifferences) {
    for (auto kind : {LossKind::squared, LossKind::cross_entropy}) {
        for (int c = 0; c < 100; ++c) {
            const Index d = 1 + c % 4;
            const Vec f = random_vec(d, 10 + c);
            Vec y = Vec::Zero(d);
            y(c % d) = 1.0;
            const Vec g = loss_grad_out(kind, f, y);
            const Mat H = loss_hess_out(kind, f, y);
            const double h = 1e-5;
            Vec fd_g(d);
            Mat fd_h(d, d);
            for (Index k = 0; k < d; ++k) {
                Vec e = Vec::Zero(d);
                e(k) = h;
                fd_g(k) = (loss_value(kind, f + e, y) - loss_value(kind, f - e, y)) / (2 * h);
                fd_h.col(k) = (loss_grad_out(kind, f + e, y) - loss_grad_out(kind, f - e, y)) / (2 * h);
            }
            if (g.norm() > 1e-12) {
                EXPECT_LT(rel_err(g, fd_g), 1e-6);
            }
            if (H.norm() > 1e-12) {
                EXPECT_LT(rel_err(H, fd_h), 1e-6);
            }
        }
    }
}

TEST(Loss, HessianSymmetricPsd) {
    for (auto kind : {LossKind::squared, LossKind::cross_entropy}) {
        for (int c = 0; c < 50; ++c) {
            const Index d = 1 + c % 5;
            const Vec f = random_vec(d, 300 + c, 3.0);
            Vec y = Vec::Zero(d);
            y(c % d) = 1.0;
            const Mat H = loss_hess_out(kind, f, y);
            EXPECT_EQ((H - H.transpose()).norm(), 0.0);
            EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat>(H).eigenvalues().minCoeff(), -1e-12);
            EXPECT_GE(loss_value(kind, f, y), 0.0);
        }
    }
}

TEST(Loss, BatchedMatchesPointwise) {
    for (auto kind : {LossKind::squared, LossKind::cross_entropy}) {
        const Mat F = random_mat(3, 5, 1);
        Mat Y = Mat::Zero(3, 5);
        for (Index i = 0; i < 5; ++i) Y(i % 3, i) = 1.0;
        const Mat dF = random_mat(3, 5, 2);
        const Mat G = loss_grads(kind, F, Y);
        const Mat HdF = loss_hess_apply(kind, F, Y, dF);
        const Vec vals = loss_values(kind, F, Y);
        for (Index i = 0; i < 5; ++i) {
            EXPECT_NEAR(vals(i), loss_value(kind, F.col(i), Y.col(i)), 1e-15);
            EXPECT_LT(rel_err(Vec(G.col(i)), loss_grad_out(kind, F.col(i), Y.col(i))), 1e-15);
            EXPECT_LT(rel_err(Vec(HdF.col(i)), Vec(loss_hess_out(kind, F.col(i), Y.col(i)) * dF.col(i))), 1e-14);
        }
    }
}

TEST(Loss, ShapeErrorsAndParsing) {
    EXPECT_THROW(loss_grad_out(LossKind::squared, Vec::Zero(2), Vec::Zero(3)), DimensionMismatch);
    EXPECT_EQ(parse_loss("squared"), LossKind::squared);
    EXPECT_EQ(parse_loss("cross_entropy"), LossKind::cross_entropy);
    EXPECT_THROW(parse_loss("hinge"), ConfigError);
}

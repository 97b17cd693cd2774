#include "kinf/loss.hpp"

#include <cmath>

#include "kinf/errors.hpp"

namespace kinf {

namespace {

Vec softmax(const Vec& f) {
    const double m = f.maxCoeff();
    Vec e = (f.array() - m).exp();
    return e / e.sum();
}

void check_shapes(const Vec& f, const Vec& y) {
    if (f.size() != y.size()) {
        throw DimensionMismatch("output and target lengths differ");
    }
}

}  // namespace

LossKind parse_loss(const std::string& name) {
    if (name == "squared" || name == "mse") return LossKind::squared;
    if (name == "cross_entropy" || name == "ce") return LossKind::cross_entropy;
    throw ConfigError("unknown loss '" + name + "'");
}

std::string to_string(LossKind kind) { return kind == LossKind::squared ? "squared" : "cross_entropy"; }

double loss_value(LossKind kind, const Vec& f, const Vec& y) {
    check_shapes(f, y);
    if (kind == LossKind::squared) return 0.5 * (f - y).squaredNorm();
    const double m = f.maxCoeff();
    const double lse = m + std::log((f.array() - m).exp().sum());
    return y.sum() * lse - y.dot(f);
}

Vec loss_grad_out(LossKind kind, const Vec& f, const Vec& y) {
    check_shapes(f, y);
    if (kind == LossKind::squared) return f - y;
    return y.sum() * softmax(f) - y;
}

Mat loss_hess_out(LossKind kind, const Vec& f, const Vec& y) {
    check_shapes(f, y);
    if (kind == LossKind::squared) return Mat::Identity(f.size(), f.size());
    const Vec p = softmax(f);
    Mat h = Mat(p.asDiagonal()) - p * p.transpose();
    return y.sum() * h;
}

Vec loss_values(LossKind kind, const Mat& F, const Mat& Y) {
    Vec out(F.cols());
    for (Index i = 0; i < F.cols(); ++i) out(i) = loss_value(kind, F.col(i), Y.col(i));
    return out;
}

Mat loss_grads(LossKind kind, const Mat& F, const Mat& Y) {
    if (F.rows() != Y.rows() || F.cols() != Y.cols()) {
        throw DimensionMismatch("outputs and targets must have equal shapes");
    }
    if (kind == LossKind::squared) return F - Y;
    Mat G(F.rows(), F.cols());
    for (Index i = 0; i < F.cols(); ++i) G.col(i) = loss_grad_out(kind, F.col(i), Y.col(i));
    return G;
}

Mat loss_hess_apply(LossKind kind, const Mat& F, const Mat& Y, const Mat& dF) {
    if (kind == LossKind::squared) return dF;
    Mat out(dF.rows(), dF.cols());
    for (Index i = 0; i < F.cols(); ++i) {
        const Vec p = softmax(F.col(i));
        const double s = Y.col(i).sum();
        const Vec d = dF.col(i);
        out.col(i) = s * (p.cwiseProduct(d) - p * p.dot(d));
    }
    return out;
}

}  // namespace kinf

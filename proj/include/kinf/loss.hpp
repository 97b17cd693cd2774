#pragma once

#include <string>

#include "kinf/types.hpp"

namespace kinf {

enum class LossKind { squared, cross_entropy };

LossKind parse_loss(const std::string& name);
std::string to_string(LossKind kind);

// Single point. Squared: 0.5 |f - y|^2. Cross-entropy: -sum_k y_k log softmax(f)_k.
double loss_value(LossKind kind, const Vec& f, const Vec& y);
Vec loss_grad_out(LossKind kind, const Vec& f, const Vec& y);
Mat loss_hess_out(LossKind kind, const Vec& f, const Vec& y);

// Batched over columns (d_out x N).
Vec loss_values(LossKind kind, const Mat& F, const Mat& Y);
Mat loss_grads(LossKind kind, const Mat& F, const Mat& Y);
// Column i of the result is hess(f_i, y_i) * dF.col(i).
Mat loss_hess_apply(LossKind kind, const Mat& F, const Mat& Y, const Mat& dF);

}  // namespace kinf

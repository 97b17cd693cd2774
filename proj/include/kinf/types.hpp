#pragma once

#include <Eigen/Dense>

namespace kinf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

// Outputs over a batch are stored as d_out x N matrices. Flattening such a
// matrix column by column gives the global (point-major, output-minor) order
// used for every stacked vector and kernel block in the library.
inline Eigen::Map<const Vec> flatten(const Mat& outputs) {
    return {outputs.data(), outputs.size()};
}

inline Eigen::Map<const Mat> unflatten(const Vec& v, Index d_out) {
    return {v.data(), d_out, v.size() / d_out};
}

}  // namespace kinf

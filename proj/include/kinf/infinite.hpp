#pragma once

#include <vector>

#include "kinf/cg.hpp"
#include "kinf/data.hpp"
#include "kinf/dual.hpp"
#include "kinf/kernel.hpp"
#include "kinf/primal.hpp"
#include "kinf/training.hpp"

namespace kinf {

struct AnalyticNtkSpec {
    int hidden_layers = 3;
    double sigma_w2 = 2.0;
    double sigma_b2 = 0.01;
    Index d_out = 1;

    void validate() const;
};

// Infinite-width NTK of a ReLU network (arc-cosine recursion), N1 x N2.
// hidden_layers == 0 gives the linear readout kernel.
Mat analytic_ntk_base(const AnalyticNtkSpec& spec, const Mat& X1, const Mat& X2);
// base (x) I_{d_out}, kept in structured form.
KernelMatrix analytic_ntk(const AnalyticNtkSpec& spec, const Mat& X1, const Mat& X2);
KernelMatrix analytic_ntk(const AnalyticNtkSpec& spec, const Mat& X);

struct FunctionState {
    Vec f_train;   // d_out*N, point-major
    Vec f0_train;  // zero
    // f_train - f0_train = K coeffs; tracked so the regularised objective can
    // be evaluated without inverting K
    Vec coeffs;
    int epoch = 0;
    double stationarity_residual = 0.0;  // |K grad L(f) + lambda (f - f0)|
    std::vector<double> objective_history;
};

struct KgdOptions {
    double lr = 0.5;
    int epochs = 5000;
    double tol = 0.0;  // stop early once the stationarity residual is below tol
};

// f <- f - lr (K (1/N) grad_f loss + lambda (f - f0)), starting from f0 = 0.
FunctionState kgd_train(const KernelMatrix& K, const LabeledDataset& ds, const RiskConfig& cfg,
                        const KgdOptions& opts);

// alpha* = -(1/lambda)(1/N) grad_f loss at the converged outputs; throws
// NotConverged when the state's stationarity residual exceeds tol.
Vec function_alpha_star(const FunctionState& state, const LabeledDataset& ds, const RiskConfig& cfg,
                        double tol = 1e-6);

// K(x_t, X) alpha* + f0(x_t), returned d_out x N_t.
Mat infinite_predict(const KernelMatrix& K_tX, const Vec& alpha_star, const Mat& f0_test);

struct InfiniteInfluence {
    ChangePrediction estimated;
    ChangePrediction actual;
    FunctionState full_state;
    FunctionState retain_state;
    DualSolve solve;
};

// Estimates from the dual system on the full-data optimum versus actual
// changes after retraining on the retain set with KGD.
InfiniteInfluence infinite_influence(const KernelMatrix& K_train, const KernelMatrix& K_test,
                                     const SplitDataset& split, const LabeledDataset& test, const RiskConfig& cfg,
                                     const KgdOptions& kgd, const CgOptions& cg, double stationarity_tol = 1e-6);

}  // namespace kinf

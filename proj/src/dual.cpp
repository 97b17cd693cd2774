#include "kinf/dual.hpp"

#include "kinf/errors.hpp"

namespace kinf {

Vec alpha_from_outputs(const Mat& outputs, const Mat& targets, const RiskConfig& cfg) {
    cfg.validate();
    const double n = static_cast<double>(outputs.cols());
    const Mat G = loss_grads(cfg.loss, outputs, targets);
    return -flatten(G) / (cfg.lambda * n);
}

Vec alpha_star(const Predictor& lin, const Vec& theta_hat, const LabeledDataset& ds, const RiskConfig& cfg, double tol,
               RepresenterCheck* check) {
    if (!lin.is_linearized()) throw ConfigError("alpha_star needs a linearized predictor");
    if (cfg.center == Center::origin && lin.reference().squaredNorm() != 0.0) {
        throw ConfigError("origin-centred regularisation requires the reference point to be 0");
    }
    const Risk risk(lin, ds, cfg);
    const Vec alpha = alpha_from_outputs(risk.batch().outputs(theta_hat), risk.targets(), cfg);
    const Vec shift = theta_hat - risk.center();
    const Vec expansion = risk.batch().vjp(theta_hat, unflatten(alpha, ds.output_dim()));
    const double scale = std::max({shift.norm(), expansion.norm(), 1e-300});
    const double residual = (shift - expansion).norm() / scale;
    if (check) check->residual = residual;
    if (!(residual <= tol)) {
        throw NotAtOptimum("representer identity residual " + std::to_string(residual) + " exceeds " +
                           std::to_string(tol) + "; theta is not a stationary point of the linearized risk");
    }
    return alpha;
}

DualSystem::DualSystem(const KernelMatrix& K, Mat outputs, Mat targets, Index forget_count, RiskConfig cfg, int shards)
    : K_(K), d_(K.d_out()), n_(K.row_points()), nf_(forget_count), nr_(K.row_points() - forget_count), cfg_(cfg),
      shards_(shards) {
    cfg_.validate();
    if (K.row_points() != K.col_points()) throw DimensionMismatch("dual system needs a square training kernel");
    if (outputs.rows() != d_ || outputs.cols() != n_ || targets.rows() != d_ || targets.cols() != n_) {
        throw DimensionMismatch("outputs and targets must be d_out x N to match the kernel");
    }
    if (nf_ <= 0 || nr_ <= 0) throw DegenerateSplit("forget and retain sets must both be nonempty");
    if (shards_ < 0) throw ConfigError("shard count must be nonnegative");
    if (shards_ > 0 && K.storage() != K.storage().transpose()) {
        throw ConfigError("sharded kernel products need an exactly symmetric kernel");
    }

    alpha_ = alpha_from_outputs(outputs, targets, cfg_);
    const Mat G = loss_grads(cfg_.loss, outputs.leftCols(nf_), targets.leftCols(nf_));
    g_f_ = flatten(G) / static_cast<double>(nf_);

    identity_curvature_ = cfg_.loss == LossKind::squared;
    B_r_.reserve(static_cast<std::size_t>(nr_));
    for (Index i = 0; i < nr_; ++i) {
        B_r_.push_back(loss_hess_out(cfg_.loss, outputs.col(nf_ + i), targets.col(nf_ + i)) /
                       static_cast<double>(nr_));
    }
}

Vec DualSystem::apply_curvature(const Vec& v) const {
    if (identity_curvature_) return v / static_cast<double>(nr_);
    Vec out(v.size());
    for (Index i = 0; i < nr_; ++i) out.segment(i * d_, d_) = B_r_[static_cast<std::size_t>(i)] * v.segment(i * d_, d_);
    return out;
}

Vec DualSystem::k_apply(Block i, Block j, const Vec& v) const {
    if (shards_ == 0 || i != Block::retain || j != Block::retain) {
        return K_.multiply_block(offset(i), points(i), offset(j), points(j), v);
    }
    const Mat& S = K_.storage();
    const ShardTable table = ShardTable::even(K_.structured() ? nr_ : nr_ * d_, shards_);
    auto record = [this](const std::vector<double>& secs) {
        if (shard_seconds_.size() < secs.size()) shard_seconds_.resize(secs.size(), 0.0);
        for (std::size_t s = 0; s < secs.size(); ++s) shard_seconds_[s] += secs[s];
    };
    if (!K_.structured()) {
        // K is symmetric, so its column-major storage read row-major is K itself
        const Index o = nf_ * d_;
        const RowBlock rr(S.data() + o * S.outerStride() + o, nr_ * d_, nr_ * d_, Eigen::OuterStride<>(S.outerStride()));
        ShardedResult res = sharded_matvec(rr, table, v);
        record(res.shard_seconds);
        return res.y;
    }
    const RowBlock rr(S.data() + nf_ * S.outerStride() + nf_, nr_, nr_, Eigen::OuterStride<>(S.outerStride()));
    Eigen::Map<const Mat> V(v.data(), d_, nr_);
    Mat out(d_, nr_);
    for (Index k = 0; k < d_; ++k) {
        ShardedResult res = sharded_matvec(rr, table, V.row(k).transpose());
        record(res.shard_seconds);
        out.row(k) = res.y.transpose();
    }
    return Eigen::Map<const Vec>(out.data(), out.size());
}

Mat DualSystem::hessian_block(Block i, Block j) const {
    const double share = static_cast<double>(nr_) / static_cast<double>(n_);
    const Mat Kir = K_.block(offset(i), points(i), nf_, nr_);
    const Mat Krj = K_.block(nf_, nr_, offset(j), points(j));
    Mat BKrj(Krj.rows(), Krj.cols());
    for (Index c = 0; c < Krj.cols(); ++c) BKrj.col(c) = apply_curvature(Krj.col(c));
    return share * (Kir * BKrj + cfg_.lambda * K_.block(offset(i), points(i), offset(j), points(j)));
}

Mat DualSystem::full_hessian() const {
    const Index f = nf_ * d_;
    const Index r = nr_ * d_;
    Mat H(f + r, f + r);
    H.topLeftCorner(f, f) = hessian_block(Block::forget, Block::forget);
    H.topRightCorner(f, r) = hessian_block(Block::forget, Block::retain);
    H.bottomLeftCorner(r, f) = hessian_block(Block::retain, Block::forget);
    H.bottomRightCorner(r, r) = hessian_block(Block::retain, Block::retain);
    return H;
}

Vec DualSystem::rhs(Block i) const {
    return K_.multiply_block(offset(i), points(i), 0, nf_, g_f_) +
           cfg_.lambda * K_.multiply_block(offset(i), points(i), 0, n_, alpha_);
}

Vec DualSystem::full_rhs() const {
    Vec out(n_ * d_);
    out << rhs(Block::forget), rhs(Block::retain);
    return out;
}

Vec DualSystem::retain_operator(const Vec& v) const {
    const double share = static_cast<double>(nr_) / static_cast<double>(n_);
    const Vec u = k_apply(Block::retain, Block::retain, v);
    return share * (k_apply(Block::retain, Block::retain, apply_curvature(u)) + cfg_.lambda * u);
}

Vec DualSystem::retain_diagonal() const {
    const double share = static_cast<double>(nr_) / static_cast<double>(n_);
    const Mat Krr = K_.block(nf_, nr_, nf_, nr_);
    Mat BK(Krr.rows(), Krr.cols());
    for (Index c = 0; c < Krr.cols(); ++c) BK.col(c) = apply_curvature(Krr.col(c));
    return share * (Krr.cwiseProduct(BK).colwise().sum().transpose() + cfg_.lambda * Krr.diagonal());
}

DualSolve DualSystem::solve_reduced(const CgOptions& opts, Index dense_limit) const {
    opts.validate();
    shard_seconds_.clear();
    const double share_r = static_cast<double>(nr_) / static_cast<double>(n_);
    const double share_f = static_cast<double>(nf_) / static_cast<double>(n_);
    const Vec known = -alpha_.head(nf_ * d_);

    // H^{rf} known, without forming the block
    const Vec Kknown = K_.multiply_block(nf_, nr_, 0, nf_, known);
    const Vec coupling = share_r * (k_apply(Block::retain, Block::retain, apply_curvature(Kknown)) + cfg_.lambda * Kknown);
    const Vec b = share_f * rhs(Block::retain) - coupling;

    DualSolve out;
    Vec retain;
    if (nr_ * d_ <= dense_limit) {
        const Mat H = hessian_block(Block::retain, Block::retain);
        Eigen::LLT<Mat> llt(H);
        retain = llt.info() == Eigen::Success ? Vec(llt.solve(b)) : Vec(H.ldlt().solve(b));
        out.dense = true;
        out.residual = (H * retain - b).norm();
    } else {
        std::optional<Vec> diag;
        if (opts.preconditioner == Preconditioner::jacobi) diag = retain_diagonal();
        const CgResult cg = cg_solve([this](const Vec& v) { return retain_operator(v); }, b, opts, diag);
        retain = cg.solution;
        out.residual = cg.residual;
        out.iters = cg.iters;
        out.max_iters_reached = cg.max_iters_reached;
    }
    if (!retain.allFinite()) throw NonFiniteEncountered("dual retain-block solve produced non-finite values");
    out.coefficients.alpha_star = alpha_;
    out.coefficients.d_out = d_;
    out.coefficients.forget_count = nf_;
    out.coefficients.delta_alpha.resize(n_ * d_);
    out.coefficients.delta_alpha << known, retain;
    out.shard_seconds = shard_seconds_;
    return out;
}

Vec DualSystem::solve_unreduced() const {
    const Mat H = full_hessian();
    const Vec b = static_cast<double>(nf_) / static_cast<double>(n_) * full_rhs();
    Eigen::LLT<Mat> llt(H);
    if (llt.info() == Eigen::Success) return llt.solve(b);
    return H.ldlt().solve(b);
}

Mat dual_hessian_block(const DualSystem& sys, Block i, Block j) { return sys.hessian_block(i, j); }

Vec dual_rhs(const DualSystem& sys, Block i) { return sys.rhs(i); }

DualSolve solve_reduced(const DualSystem& sys, const CgOptions& opts) { return sys.solve_reduced(opts); }

Vec map_to_params(const Mlp& model, const Tape& reference_tape, const Vec& theta_hat, const Vec& delta_alpha) {
    const Index d = model.spec().output_dim();
    if (delta_alpha.size() != d * reference_tape.points() || theta_hat.size() != model.param_count()) {
        throw DimensionMismatch("map_to_params: lengths do not match the model and tape");
    }
    return theta_hat + model.vjp(reference_tape, unflatten(delta_alpha, d));
}

Vec map_to_params(const Mat& stacked_jacobian, const Vec& theta_hat, const Vec& delta_alpha) {
    if (stacked_jacobian.rows() != delta_alpha.size() || stacked_jacobian.cols() != theta_hat.size()) {
        throw DimensionMismatch("map_to_params: Jacobian shape does not match the vectors");
    }
    return theta_hat + stacked_jacobian.transpose() * delta_alpha;
}

ChangePrediction predict_changes_dual(const KernelMatrix& K_t, const KernelMatrix& K, const Vec& delta_alpha,
                                      const Vec& alpha_star, const Mat& test_outputs, const Mat& test_targets,
                                      const RiskConfig& cfg) {
    const Index d = K.d_out();
    if (K_t.d_out() != d || K_t.col_points() != K.row_points() || delta_alpha.size() != K.cols() ||
        alpha_star.size() != K.cols() || test_outputs.rows() != d || test_outputs.cols() != K_t.row_points() ||
        test_targets.rows() != d || test_targets.cols() != K_t.row_points()) {
        throw DimensionMismatch("predict_changes_dual: shapes of kernels, coefficients and test data disagree");
    }
    ChangePrediction out;
    out.output_change = unflatten(K_t.multiply(delta_alpha), d);
    const Mat G = loss_grads(cfg.loss, test_outputs, test_targets);
    out.loss_change_raw = G.cwiseProduct(out.output_change).colwise().sum().transpose();
    const double reg = cfg.lambda * alpha_star.dot(K.multiply(delta_alpha));
    out.loss_change_regularized = out.loss_change_raw.array() + reg;
    return out;
}

}  // namespace kinf

#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "kinf/model.hpp"
#include "kinf/types.hpp"

namespace kinf {

using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowBlock = Eigen::Map<const RowMajorMat, 0, Eigen::OuterStride<>>;

enum class KernelKind : std::uint32_t { empirical = 1, analytic = 2 };

struct KernelSource {
    KernelKind kind = KernelKind::empirical;
    std::uint64_t spec_hash = 0;
    int depth = 0;
    double sigma_w2 = 0.0;
    double sigma_b2 = 0.0;
};

// Kernel over (point, output dim) pairs, indexed point-major / output-minor.
// Either stored densely (d_out*N1 x d_out*N2) or as base (N1 x N2) (x) I_{d_out}.
class KernelMatrix {
public:
    KernelMatrix() = default;
    static KernelMatrix dense(Mat values, Index d_out, KernelSource source);
    static KernelMatrix kronecker(Mat base, Index d_out, KernelSource source);

    bool structured() const { return structured_; }
    Index d_out() const { return d_out_; }
    Index row_points() const { return structured_ ? store_.rows() : store_.rows() / d_out_; }
    Index col_points() const { return structured_ ? store_.cols() : store_.cols() / d_out_; }
    Index rows() const { return row_points() * d_out_; }
    Index cols() const { return col_points() * d_out_; }
    const KernelSource& source() const { return source_; }

    // Dense values, or the N1 x N2 factor when structured.
    const Mat& storage() const { return store_; }
    Mat expanded() const;
    KernelMatrix as_dense() const;

    // Point ranges [r0, r0+nr) x [c0, c0+nc), expanded.
    Mat block(Index r0, Index nr, Index c0, Index nc) const;
    // block(r0, nr, c0, nc) * v without materialising the block.
    Vec multiply_block(Index r0, Index nr, Index c0, Index nc, const Vec& v) const;
    Vec multiply(const Vec& v) const { return multiply_block(0, row_points(), 0, col_points(), v); }
    // Sub-kernel over point ranges, keeping the storage form.
    KernelMatrix slice(Index r0, Index nr, Index c0, Index nc) const;

    double trace() const;
    void add_diagonal(double value);

private:
    Mat store_;
    Index d_out_ = 1;
    bool structured_ = false;
    KernelSource source_;
};

// K = J(X1) J(X2)^T at theta_ref, assembled layer by layer from forward
// activations and output sensitivities without forming Jacobians.
KernelMatrix empirical_ntk(const Mlp& model, const Vec& theta_ref, const Mat& X1, const Mat& X2);
KernelMatrix empirical_ntk(const Mlp& model, const Vec& theta_ref, const Mat& X);

// Contiguous row ranges [begin, end) that must cover 0..rows exactly once.
struct ShardTable {
    std::vector<std::pair<Index, Index>> ranges;

    static ShardTable even(Index rows, int shards);
    static ShardTable from_sizes(const std::vector<Index>& sizes);
    void validate(Index rows) const;
};

struct ShardedResult {
    Vec y;
    std::vector<double> shard_seconds;
};

// Each shard runs on its own worker thread; every output row is a single dot
// product so the result does not depend on the partition.
ShardedResult sharded_matvec(const RowBlock& K, const ShardTable& shards, const Vec& v);
ShardedResult sharded_matvec(const RowMajorMat& K, const ShardTable& shards, const Vec& v);

struct PsdCheck {
    bool passed = true;
    double jitter = 0.0;
};

// Cholesky probe on K + 1e-8*trace/N*I; on failure adds 1e-10*trace/N to the
// diagonal of K and reports the amount.
PsdCheck ensure_psd(KernelMatrix& K);

// Result(i, j) = K(row_order[i], col_order[j]) over points, keeping the
// storage form.
KernelMatrix permute_points(const KernelMatrix& K, const std::vector<Index>& row_order,
                            const std::vector<Index>& col_order);

void save_kernel(const std::filesystem::path& path, const KernelMatrix& K);
KernelMatrix load_kernel(const std::filesystem::path& path);

}  // namespace kinf

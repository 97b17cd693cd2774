#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kinf/types.hpp"

namespace kinf {

enum class Activation { relu, identity };

// standard:   z = W a + b, W ~ N(0, 2/fan_in), b = 0
// ntk:        z = sqrt(sigma_w2/fan_in) W a + sqrt(sigma_b2) b, W, b ~ N(0, 1)
enum class Parameterization { standard, ntk };

struct ModelSpec {
    std::vector<Index> widths;  // d_in, hidden..., d_out
    Activation activation = Activation::relu;
    Parameterization parameterization = Parameterization::ntk;
    double sigma_w2 = 2.0;
    double sigma_b2 = 0.01;
    std::uint64_t init_seed = 0;

    Index input_dim() const { return widths.front(); }
    Index output_dim() const { return widths.back(); }
    Index num_layers() const { return static_cast<Index>(widths.size()) - 1; }
    Index param_count() const;

    // Architecture fingerprint (FNV-1a over widths, activation and scaling);
    // the init seed is not part of it.
    std::uint64_t hash() const;
    void validate() const;
};

struct LayerSlot {
    Index weight_offset;  // fan_out x fan_in block, column-major
    Index bias_offset;
    Index fan_in;
    Index fan_out;
};

class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(const ModelSpec& spec);

    const std::vector<LayerSlot>& layers() const { return layers_; }
    Index size() const { return size_; }

private:
    std::vector<LayerSlot> layers_;
    Index size_ = 0;
};

struct ParamVector {
    ParamLayout layout;
    Vec values;

    void validate() const;
};

// Forward record of a batch: pre[l] = Z_{l+1} (fan_out x N), post[l] = A_l
// (fan_in of layer l+1, A_0 = X^T). outputs() is the last pre-activation.
struct Tape {
    Vec theta;
    std::vector<Mat> pre;
    std::vector<Mat> post;

    const Mat& outputs() const { return pre.back(); }
    Index points() const { return post.front().cols(); }
};

// Fully connected network with exact first- and second-order derivatives.
// Batches are given as N x d_in feature matrices; outputs come back d_out x N.
class Mlp {
public:
    explicit Mlp(ModelSpec spec);

    const ModelSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }
    Index param_count() const { return layout_.size(); }

    ParamVector init_params() const;

    Tape record(const Vec& theta, const Mat& X) const;
    Mat forward(const Vec& theta, const Mat& X) const;
    Vec forward_point(const Vec& theta, const Vec& x) const;

    // J v for every point of the tape (d_out x N).
    Mat jvp(const Tape& tape, const Vec& v) const;
    // sum_i J_i^T u_i over the batch.
    Vec vjp(const Tape& tape, const Mat& cotangent) const;
    // Directional derivative of theta -> vjp(theta, U) along v with U held
    // fixed. Combined with vjp of the cotangent change it gives the exact
    // Hessian-vector product of any loss composed with the network.
    Vec vjp_derivative(const Tape& tape, const Mat& cotangent, const Vec& v) const;

    Mat jacobian(const Vec& theta, const Vec& x) const;
    // d_out*N x d_theta, row (i*d_out + k) = grad of output k at point i.
    Mat stacked_jacobian(const Vec& theta, const Mat& X) const;

    // delta_l for each layer: column (i*d_out + k) holds d f_k(x_i) / d z_l.
    std::vector<Mat> output_sensitivities(const Tape& tape) const;

    double weight_scale(Index layer) const { return weight_scale_[static_cast<std::size_t>(layer)]; }
    double bias_scale() const { return bias_scale_; }

private:
    void check_theta(const Vec& theta) const;
    Mat activate(const Mat& z) const;
    Mat activation_slope(const Mat& z) const;

    ModelSpec spec_;
    ParamLayout layout_;
    std::vector<double> weight_scale_;
    double bias_scale_ = 1.0;
};

// First-order Taylor expansion of a network around theta_ref.
struct LinearizedModel {
    Mlp base;
    ParamVector theta_ref;

    Vec linear_forward(const Vec& theta, const Vec& x) const;
    Mat linear_forward(const Vec& theta, const Mat& X) const;
};

// Checkpoint: u64 d_theta, u64 spec hash, then d_theta float64 values
// (little-endian host order).
void save_params(const std::filesystem::path& path, const ParamVector& params, const ModelSpec& spec);
// DimensionMismatch when the size disagrees with `spec`, ConfigError when the
// stored hash belongs to another architecture.
ParamVector load_params(const std::filesystem::path& path, const ModelSpec& spec);

}  // namespace kinf

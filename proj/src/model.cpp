#include "kinf/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "kinf/errors.hpp"

namespace kinf {

namespace {

Eigen::Map<const Mat> weight_view(const Vec& theta, const LayerSlot& slot) {
    return {theta.data() + slot.weight_offset, slot.fan_out, slot.fan_in};
}

Eigen::Map<const Vec> bias_view(const Vec& theta, const LayerSlot& slot) {
    return {theta.data() + slot.bias_offset, slot.fan_out};
}

Eigen::Map<Mat> weight_view(Vec& theta, const LayerSlot& slot) {
    return {theta.data() + slot.weight_offset, slot.fan_out, slot.fan_in};
}

Eigen::Map<Vec> bias_view(Vec& theta, const LayerSlot& slot) { return {theta.data() + slot.bias_offset, slot.fan_out}; }

}  // namespace

Index ModelSpec::param_count() const {
    Index count = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        count += (widths[i] + 1) * widths[i + 1];
    }
    return count;
}

std::uint64_t ModelSpec::hash() const {
    std::ostringstream key;
    for (Index w : widths) key << w << ',';
    key << '|' << static_cast<int>(activation) << '|' << static_cast<int>(parameterization);
    if (parameterization == Parameterization::ntk) {
        key << '|' << sigma_w2 << '|' << sigma_b2;
    }
    std::uint64_t h = 14695981039346656037ull;
    for (char c : key.str()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

void ModelSpec::validate() const {
    if (widths.size() < 2) {
        throw ConfigError("model needs at least one layer (d_in and d_out)");
    }
    for (Index w : widths) {
        if (w <= 0) throw ConfigError("layer widths must be positive");
    }
    if (parameterization == Parameterization::ntk && (sigma_w2 <= 0.0 || sigma_b2 < 0.0)) {
        throw ConfigError("ntk parameterization needs sigma_w2 > 0 and sigma_b2 >= 0");
    }
}

ParamLayout::ParamLayout(const ModelSpec& spec) {
    Index offset = 0;
    for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
        LayerSlot slot{};
        slot.fan_in = spec.widths[i];
        slot.fan_out = spec.widths[i + 1];
        slot.weight_offset = offset;
        offset += slot.fan_in * slot.fan_out;
        slot.bias_offset = offset;
        offset += slot.fan_out;
        layers_.push_back(slot);
    }
    size_ = offset;
}

void ParamVector::validate() const {
    if (values.size() != layout.size()) {
        throw DimensionMismatch("parameter vector length " + std::to_string(values.size()) + " != layout size " +
                                std::to_string(layout.size()));
    }
    if (!values.allFinite()) {
        throw NonFiniteEncountered("parameter vector has non-finite entries");
    }
}

Mlp::Mlp(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    layout_ = ParamLayout(spec_);
    for (const auto& slot : layout_.layers()) {
        weight_scale_.push_back(spec_.parameterization == Parameterization::ntk
                                    ? std::sqrt(spec_.sigma_w2 / static_cast<double>(slot.fan_in))
                                    : 1.0);
    }
    bias_scale_ = spec_.parameterization == Parameterization::ntk ? std::sqrt(spec_.sigma_b2) : 1.0;
}

ParamVector Mlp::init_params() const {
    ParamVector p{layout_, Vec::Zero(layout_.size())};
    std::mt19937_64 rng(spec_.init_seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (const auto& slot : layout_.layers()) {
        const double w_std = spec_.parameterization == Parameterization::ntk
                                 ? 1.0
                                 : std::sqrt(2.0 / static_cast<double>(slot.fan_in));
        auto W = weight_view(p.values, slot);
        for (Index j = 0; j < W.cols(); ++j)
            for (Index i = 0; i < W.rows(); ++i) W(i, j) = w_std * unit(rng);
        auto b = bias_view(p.values, slot);
        if (spec_.parameterization == Parameterization::ntk) {
            for (Index i = 0; i < b.size(); ++i) b(i) = unit(rng);
        }
    }
    return p;
}

void Mlp::check_theta(const Vec& theta) const {
    if (theta.size() != layout_.size()) {
        throw DimensionMismatch("theta has length " + std::to_string(theta.size()) + ", model expects " +
                                std::to_string(layout_.size()));
    }
}

Mat Mlp::activate(const Mat& z) const {
    if (spec_.activation == Activation::identity) return z;
    return z.cwiseMax(0.0);
}

// ReLU slope at exactly 0 is taken as 0.
Mat Mlp::activation_slope(const Mat& z) const {
    if (spec_.activation == Activation::identity) return Mat::Ones(z.rows(), z.cols());
    return (z.array() > 0.0).cast<double>().matrix();
}

Tape Mlp::record(const Vec& theta, const Mat& X) const {
    check_theta(theta);
    if (X.cols() != spec_.input_dim()) {
        throw DimensionMismatch("input has " + std::to_string(X.cols()) + " features, model expects " +
                                std::to_string(spec_.input_dim()));
    }
    Tape tape;
    tape.theta = theta;
    const auto& layers = layout_.layers();
    tape.post.reserve(layers.size());
    tape.pre.reserve(layers.size());
    tape.post.push_back(X.transpose());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& slot = layers[l];
        Mat z = weight_scale_[l] * (weight_view(theta, slot) * tape.post.back());
        z.colwise() += bias_scale_ * bias_view(theta, slot);
        if (l + 1 < layers.size()) {
            tape.post.push_back(activate(z));
        }
        tape.pre.push_back(std::move(z));
    }
    return tape;
}

Mat Mlp::forward(const Vec& theta, const Mat& X) const { return record(theta, X).outputs(); }

Vec Mlp::forward_point(const Vec& theta, const Vec& x) const {
    if (x.size() != spec_.input_dim()) {
        throw DimensionMismatch("input vector length does not match d_in");
    }
    return forward(theta, x.transpose()).col(0);
}

Mat Mlp::jvp(const Tape& tape, const Vec& v) const {
    check_theta(v);
    const auto& layers = layout_.layers();
    Mat dA;  // tangent of A_{l}; zero for the inputs
    Mat dZ;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& slot = layers[l];
        dZ = weight_scale_[l] * (weight_view(v, slot) * tape.post[l]);
        if (l > 0) {
            dZ.noalias() += weight_scale_[l] * (weight_view(tape.theta, slot) * dA);
        }
        dZ.colwise() += bias_scale_ * bias_view(v, slot);
        if (l + 1 < layers.size()) {
            dA = activation_slope(tape.pre[l]).cwiseProduct(dZ);
        }
    }
    return dZ;
}

Vec Mlp::vjp(const Tape& tape, const Mat& cotangent) const {
    const auto& layers = layout_.layers();
    if (cotangent.rows() != spec_.output_dim() || cotangent.cols() != tape.points()) {
        throw DimensionMismatch("cotangent must be d_out x N");
    }
    Vec grad = Vec::Zero(layout_.size());
    Mat G = cotangent;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& slot = layers[l];
        weight_view(grad, slot).noalias() = weight_scale_[l] * (G * tape.post[l].transpose());
        bias_view(grad, slot) = bias_scale_ * G.rowwise().sum();
        if (l > 0) {
            Mat back = weight_scale_[l] * (weight_view(tape.theta, slot).transpose() * G);
            G = activation_slope(tape.pre[l - 1]).cwiseProduct(back);
        }
    }
    return grad;
}

Vec Mlp::vjp_derivative(const Tape& tape, const Mat& cotangent, const Vec& v) const {
    check_theta(v);
    const auto& layers = layout_.layers();
    const std::size_t L = layers.size();

    // forward tangents dA_l (dA_0 = 0)
    std::vector<Mat> dA(L);
    dA[0] = Mat::Zero(tape.post[0].rows(), tape.post[0].cols());
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const auto& slot = layers[l];
        Mat dZ = weight_scale_[l] * (weight_view(v, slot) * tape.post[l]);
        if (l > 0) dZ.noalias() += weight_scale_[l] * (weight_view(tape.theta, slot) * dA[l]);
        dZ.colwise() += bias_scale_ * bias_view(v, slot);
        dA[l + 1] = activation_slope(tape.pre[l]).cwiseProduct(dZ);
    }

    // reverse pass differentiated along v; the activation's second derivative
    // vanishes for relu and identity.
    Vec out = Vec::Zero(layout_.size());
    Mat G = cotangent;
    Mat dG = Mat::Zero(G.rows(), G.cols());
    for (std::size_t l = L; l-- > 0;) {
        const auto& slot = layers[l];
        weight_view(out, slot).noalias() =
            weight_scale_[l] * (dG * tape.post[l].transpose() + G * dA[l].transpose());
        bias_view(out, slot) = bias_scale_ * dG.rowwise().sum();
        if (l > 0) {
            const Mat slope = activation_slope(tape.pre[l - 1]);
            const auto W = weight_view(tape.theta, slot);
            const auto dW = weight_view(v, slot);
            Mat next_dG = weight_scale_[l] * (dW.transpose() * G + W.transpose() * dG);
            Mat next_G = weight_scale_[l] * (W.transpose() * G);
            dG = slope.cwiseProduct(next_dG);
            G = slope.cwiseProduct(next_G);
        }
    }
    return out;
}

std::vector<Mat> Mlp::output_sensitivities(const Tape& tape) const {
    const auto& layers = layout_.layers();
    const Index d_out = spec_.output_dim();
    const Index n = tape.points();
    std::vector<Mat> deltas(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        deltas[l].resize(layers[l].fan_out, n * d_out);
    }
    for (Index k = 0; k < d_out; ++k) {
        Mat G = Mat::Zero(d_out, n);
        G.row(k).setOnes();
        for (std::size_t l = layers.size(); l-- > 0;) {
            for (Index i = 0; i < n; ++i) {
                deltas[l].col(i * d_out + k) = G.col(i);
            }
            if (l > 0) {
                Mat back = weight_scale_[l] * (weight_view(tape.theta, layers[l]).transpose() * G);
                G = activation_slope(tape.pre[l - 1]).cwiseProduct(back);
            }
        }
    }
    return deltas;
}

Mat Mlp::jacobian(const Vec& theta, const Vec& x) const {
    if (x.size() != spec_.input_dim()) {
        throw DimensionMismatch("input vector length does not match d_in");
    }
    return stacked_jacobian(theta, x.transpose());
}

Mat Mlp::stacked_jacobian(const Vec& theta, const Mat& X) const {
    if (X.rows() < 1) {
        throw DimensionMismatch("stacked_jacobian needs at least one point");
    }
    const Index d_out = spec_.output_dim();
    Mat J(X.rows() * d_out, layout_.size());
    // one reverse pass per (point, output dim)
    for (Index i = 0; i < X.rows(); ++i) {
        const Tape tape = record(theta, X.row(i));
        for (Index k = 0; k < d_out; ++k) {
            Mat e = Mat::Zero(d_out, 1);
            e(k, 0) = 1.0;
            J.row(i * d_out + k) = vjp(tape, e).transpose();
        }
    }
    return J;
}

Vec LinearizedModel::linear_forward(const Vec& theta, const Vec& x) const {
    return linear_forward(theta, Mat(x.transpose())).col(0);
}

Mat LinearizedModel::linear_forward(const Vec& theta, const Mat& X) const {
    const Tape tape = base.record(theta_ref.values, X);
    if (theta.size() != theta_ref.values.size()) {
        throw DimensionMismatch("theta length does not match the reference point");
    }
    return tape.outputs() + base.jvp(tape, theta - theta_ref.values);
}

void save_params(const std::filesystem::path& path, const ParamVector& params, const ModelSpec& spec) {
    if (params.values.size() != spec.param_count()) {
        throw DimensionMismatch("parameter vector does not match the model architecture");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    const std::uint64_t header[2] = {static_cast<std::uint64_t>(params.values.size()), spec.hash()};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(double)));
    if (!out) throw ConfigError("failed writing " + path.string());
}

ParamVector load_params(const std::filesystem::path& path, const ModelSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    std::uint64_t header[2];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in) throw TruncatedFile("checkpoint " + path.string() + " ends inside the header");
    if (header[0] != static_cast<std::uint64_t>(spec.param_count())) {
        throw DimensionMismatch("checkpoint holds " + std::to_string(header[0]) + " parameters, model has " +
                                std::to_string(spec.param_count()));
    }
    if (header[1] != spec.hash()) throw ConfigError("checkpoint was written for a different architecture");
    ParamVector p{ParamLayout(spec), Vec(static_cast<Index>(header[0]))};
    in.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(header[0] * sizeof(double)));
    if (!in) throw TruncatedFile("checkpoint " + path.string() + " is shorter than its header says");
    return p;
}

}  // namespace kinf

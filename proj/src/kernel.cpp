#include "kinf/kernel.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <thread>

#include "kinf/errors.hpp"

namespace kinf {

KernelMatrix KernelMatrix::dense(Mat values, Index d_out, KernelSource source) {
    if (d_out < 1 || values.rows() % d_out != 0 || values.cols() % d_out != 0) {
        throw DimensionMismatch("dense kernel dimensions must be multiples of d_out");
    }
    KernelMatrix k;
    k.store_ = std::move(values);
    k.d_out_ = d_out;
    k.structured_ = false;
    k.source_ = source;
    return k;
}

KernelMatrix KernelMatrix::kronecker(Mat base, Index d_out, KernelSource source) {
    if (d_out < 1) throw DimensionMismatch("d_out must be positive");
    KernelMatrix k;
    k.store_ = std::move(base);
    k.d_out_ = d_out;
    k.structured_ = true;
    k.source_ = source;
    return k;
}

Mat KernelMatrix::expanded() const { return block(0, row_points(), 0, col_points()); }

KernelMatrix KernelMatrix::as_dense() const { return dense(expanded(), d_out_, source_); }

Mat KernelMatrix::block(Index r0, Index nr, Index c0, Index nc) const {
    if (r0 < 0 || c0 < 0 || r0 + nr > row_points() || c0 + nc > col_points()) {
        throw DimensionMismatch("kernel block out of range");
    }
    const Index d = d_out_;
    if (!structured_) return store_.block(r0 * d, c0 * d, nr * d, nc * d);
    Mat out = Mat::Zero(nr * d, nc * d);
    for (Index j = 0; j < nc; ++j)
        for (Index i = 0; i < nr; ++i) {
            const double value = store_(r0 + i, c0 + j);
            for (Index k = 0; k < d; ++k) out(i * d + k, j * d + k) = value;
        }
    return out;
}

Vec KernelMatrix::multiply_block(Index r0, Index nr, Index c0, Index nc, const Vec& v) const {
    if (r0 < 0 || c0 < 0 || r0 + nr > row_points() || c0 + nc > col_points()) {
        throw DimensionMismatch("kernel block out of range");
    }
    const Index d = d_out_;
    if (v.size() != nc * d) {
        throw DimensionMismatch("vector length " + std::to_string(v.size()) + " does not match kernel block columns " +
                                std::to_string(nc * d));
    }
    if (!structured_) return store_.block(r0 * d, c0 * d, nr * d, nc * d) * v;
    // (B (x) I) vec(V) = vec(V B^T) with V = d x nc
    Eigen::Map<const Mat> V(v.data(), d, nc);
    Mat out = V * store_.block(r0, c0, nr, nc).transpose();
    return Eigen::Map<const Vec>(out.data(), out.size());
}

KernelMatrix KernelMatrix::slice(Index r0, Index nr, Index c0, Index nc) const {
    if (!structured_) return dense(block(r0, nr, c0, nc), d_out_, source_);
    if (r0 < 0 || c0 < 0 || r0 + nr > row_points() || c0 + nc > col_points()) {
        throw DimensionMismatch("kernel slice out of range");
    }
    return kronecker(store_.block(r0, c0, nr, nc), d_out_, source_);
}

double KernelMatrix::trace() const {
    if (rows() != cols()) throw DimensionMismatch("trace of a non-square kernel");
    return structured_ ? static_cast<double>(d_out_) * store_.trace() : store_.trace();
}

void KernelMatrix::add_diagonal(double value) {
    if (rows() != cols()) throw DimensionMismatch("diagonal shift of a non-square kernel");
    store_.diagonal().array() += value;
}

KernelMatrix empirical_ntk(const Mlp& model, const Vec& theta_ref, const Mat& X1, const Mat& X2) {
    if (X1.rows() < 1 || X2.rows() < 1) throw DimensionMismatch("empirical_ntk needs nonempty inputs");
    const Index d = model.spec().output_dim();
    const Tape t1 = model.record(theta_ref, X1);
    const Tape t2 = model.record(theta_ref, X2);
    const auto s1 = model.output_sensitivities(t1);
    const auto s2 = model.output_sensitivities(t2);
    const Index n1 = X1.rows();
    const Index n2 = X2.rows();
    const double cb2 = model.bias_scale() * model.bias_scale();

    Mat K = Mat::Zero(n1 * d, n2 * d);
    for (std::size_t l = 0; l < s1.size(); ++l) {
        const double cw = model.weight_scale(static_cast<Index>(l));
        const Mat delta = s1[l].transpose() * s2[l];
        const Mat act = (cw * cw) * (t1.post[l].transpose() * t2.post[l]);
        for (Index j = 0; j < n2 * d; ++j) {
            const Index pj = j / d;
            for (Index i = 0; i < n1 * d; ++i) {
                K(i, j) += delta(i, j) * (act(i / d, pj) + cb2);
            }
        }
    }
    KernelSource src;
    src.kind = KernelKind::empirical;
    src.spec_hash = model.spec().hash();
    return KernelMatrix::dense(std::move(K), d, src);
}

KernelMatrix empirical_ntk(const Mlp& model, const Vec& theta_ref, const Mat& X) {
    KernelMatrix K = empirical_ntk(model, theta_ref, X, X);
    // symmetrise exactly; the two triangles differ only by summation order
    Mat sym = 0.5 * (K.storage() + K.storage().transpose());
    return KernelMatrix::dense(std::move(sym), K.d_out(), K.source());
}

ShardTable ShardTable::even(Index rows, int shards) {
    if (shards < 1) throw ConfigError("shard count must be at least 1");
    ShardTable t;
    const Index k = std::min<Index>(shards, std::max<Index>(rows, 1));
    Index begin = 0;
    for (Index s = 0; s < k; ++s) {
        const Index size = rows / k + (s < rows % k ? 1 : 0);
        t.ranges.emplace_back(begin, begin + size);
        begin += size;
    }
    return t;
}

ShardTable ShardTable::from_sizes(const std::vector<Index>& sizes) {
    ShardTable t;
    Index begin = 0;
    for (Index s : sizes) {
        t.ranges.emplace_back(begin, begin + s);
        begin += s;
    }
    return t;
}

void ShardTable::validate(Index rows) const {
    if (ranges.empty()) throw PartitionGap("no shards given");
    auto sorted = ranges;
    std::sort(sorted.begin(), sorted.end());
    Index next = 0;
    for (const auto& [b, e] : sorted) {
        if (e < b) throw PartitionOverlap("shard range with end before begin");
        if (b < next) throw PartitionOverlap("shards overlap at row " + std::to_string(b));
        if (b > next) throw PartitionGap("rows " + std::to_string(next) + ".." + std::to_string(b - 1) + " not covered");
        next = e;
    }
    if (next > rows) throw PartitionOverlap("shards extend past row " + std::to_string(rows - 1));
    if (next < rows) throw PartitionGap("rows " + std::to_string(next) + ".." + std::to_string(rows - 1) + " not covered");
}

ShardedResult sharded_matvec(const RowBlock& K, const ShardTable& shards, const Vec& v) {
    if (K.cols() != v.size()) throw DimensionMismatch("matvec: vector length does not match kernel columns");
    shards.validate(K.rows());
    ShardedResult res;
    res.y.resize(K.rows());
    res.shard_seconds.assign(shards.ranges.size(), 0.0);

    auto work = [&](std::size_t s) {
        const auto start = std::chrono::steady_clock::now();
        const auto [b, e] = shards.ranges[s];
        for (Index i = b; i < e; ++i) res.y(i) = K.row(i).dot(v);
        res.shard_seconds[s] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    if (shards.ranges.size() == 1) {
        work(0);
        return res;
    }
    std::vector<std::thread> workers;
    workers.reserve(shards.ranges.size());
    for (std::size_t s = 0; s < shards.ranges.size(); ++s) workers.emplace_back(work, s);
    for (auto& w : workers) w.join();
    return res;
}

ShardedResult sharded_matvec(const RowMajorMat& K, const ShardTable& shards, const Vec& v) {
    return sharded_matvec(RowBlock(K.data(), K.rows(), K.cols(), Eigen::OuterStride<>(K.outerStride())), shards, v);
}

PsdCheck ensure_psd(KernelMatrix& K) {
    const Mat& S = K.storage();
    if (S.rows() != S.cols()) throw DimensionMismatch("PSD check needs a square kernel");
    const double scale = K.trace() / static_cast<double>(K.rows());
    Mat probe = S;
    probe.diagonal().array() += 1e-8 * scale;
    Eigen::LLT<Mat> llt(probe);
    PsdCheck out;
    if (llt.info() == Eigen::Success) return out;
    out.passed = false;
    out.jitter = 1e-10 * scale;
    K.add_diagonal(out.jitter);
    return out;
}

namespace {

constexpr char kMagic[8] = {'K', 'I', 'N', 'F', 'K', 'E', 'R', 'N'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw TruncatedFile("kernel cache " + path.string() + " ends inside the header");
    return value;
}

}  // namespace

KernelMatrix permute_points(const KernelMatrix& K, const std::vector<Index>& row_order,
                            const std::vector<Index>& col_order) {
    const auto check = [](const std::vector<Index>& order, Index n) {
        for (Index i : order) {
            if (i < 0 || i >= n) throw DimensionMismatch("permutation index out of range");
        }
    };
    check(row_order, K.row_points());
    check(col_order, K.col_points());
    if (K.structured()) {
        return KernelMatrix::kronecker(K.storage()(row_order, col_order), K.d_out(), K.source());
    }
    const Index d = K.d_out();
    const auto expand = [d](const std::vector<Index>& order) {
        std::vector<Index> idx;
        idx.reserve(order.size() * static_cast<std::size_t>(d));
        for (Index i : order)
            for (Index k = 0; k < d; ++k) idx.push_back(i * d + k);
        return idx;
    };
    return KernelMatrix::dense(K.storage()(expand(row_order), expand(col_order)), d, K.source());
}

void save_kernel(const std::filesystem::path& path, const KernelMatrix& K) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(K.source().kind));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(K.row_points()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(K.col_points()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(K.d_out()));
    put<std::uint64_t>(out, K.source().spec_hash);
    put<std::uint32_t>(out, K.structured() ? 1u : 0u);
    put<std::int32_t>(out, K.source().depth);
    put<double>(out, K.source().sigma_w2);
    put<double>(out, K.source().sigma_b2);
    const RowMajorMat payload = K.storage();
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw ConfigError("failed writing " + path.string());
}

KernelMatrix load_kernel(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open kernel cache " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw BadMagic("kernel cache " + path.string() + " has a bad magic");
    }
    if (get<std::uint32_t>(in, path) != kVersion) throw BadMagic("unsupported kernel cache version");
    KernelSource src;
    src.kind = static_cast<KernelKind>(get<std::uint32_t>(in, path));
    const auto n1 = static_cast<Index>(get<std::uint64_t>(in, path));
    const auto n2 = static_cast<Index>(get<std::uint64_t>(in, path));
    const auto d = static_cast<Index>(get<std::uint64_t>(in, path));
    src.spec_hash = get<std::uint64_t>(in, path);
    const bool structured = get<std::uint32_t>(in, path) != 0;
    src.depth = get<std::int32_t>(in, path);
    src.sigma_w2 = get<double>(in, path);
    src.sigma_b2 = get<double>(in, path);
    const Index r = structured ? n1 : n1 * d;
    const Index c = structured ? n2 : n2 * d;
    RowMajorMat payload(r, c);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!in) throw TruncatedFile("kernel cache " + path.string() + " payload is truncated");
    Mat values = payload;
    return structured ? KernelMatrix::kronecker(std::move(values), d, src)
                      : KernelMatrix::dense(std::move(values), d, src);
}

}  // namespace kinf

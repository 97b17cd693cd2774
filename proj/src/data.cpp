#include "kinf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "kinf/errors.hpp"

namespace kinf {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) {
        throw TruncatedFile(path.string() + ": header truncated");
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<int> observed_classes(const std::vector<int>& labels) {
    std::set<int> seen(labels.begin(), labels.end());
    return {seen.begin(), seen.end()};
}

// Fisher-Yates; deterministic for a given engine state.
void fisher_yates(std::vector<Index>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(v[i - 1], v[pick(rng)]);
    }
}

}  // namespace

void LabeledDataset::validate() const {
    if (features.rows() < 1) {
        throw EmptyDataset("dataset '" + name + "' has no rows");
    }
    if (targets.rows() != features.rows() || static_cast<Index>(labels.size()) != features.rows()) {
        throw DimensionMismatch("dataset '" + name + "': features, targets and labels disagree on N");
    }
    if (features.size() > 0 && (features.minCoeff() < 0.0 || features.maxCoeff() > 1.0)) {
        throw ConfigError("dataset '" + name + "': feature values outside [0,1]");
    }
    for (Index i = 0; i < targets.rows(); ++i) {
        if (encoding == TargetEncoding::one_hot) {
            if (targets.row(i).sum() != 1.0) {
                throw ConfigError("dataset '" + name + "': one-hot row does not sum to 1");
            }
        } else if ((targets.row(i).array().abs() != 1.0).any()) {
            throw ConfigError("dataset '" + name + "': +/-1 target with |value| != 1");
        }
    }
}

LabeledDataset LabeledDataset::rows(const std::vector<Index>& order) const {
    LabeledDataset out;
    const auto n = static_cast<Index>(order.size());
    out.features.resize(n, features.cols());
    out.targets.resize(n, targets.cols());
    out.labels.resize(order.size());
    for (Index i = 0; i < n; ++i) {
        const Index src = order[static_cast<std::size_t>(i)];
        out.features.row(i) = features.row(src);
        out.targets.row(i) = targets.row(src);
        out.labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    }
    out.classes = classes;
    out.encoding = encoding;
    out.name = name;
    return out;
}

LabeledDataset LabeledDataset::slice(Index begin, Index end) const {
    LabeledDataset out;
    out.features = features.middleRows(begin, end - begin);
    out.targets = targets.middleRows(begin, end - begin);
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
    out.classes = classes;
    out.encoding = encoding;
    out.name = name;
    return out;
}

Mat encode_targets(const std::vector<int>& labels, const std::vector<int>& classes, TargetEncoding encoding) {
    std::map<int, Index> column;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        column[classes[k]] = static_cast<Index>(k);
    }
    const auto n = static_cast<Index>(labels.size());
    if (encoding == TargetEncoding::plus_minus_one) {
        if (classes.size() != 2) {
            throw ConfigError("+/-1 encoding needs exactly two classes");
        }
        Mat t(n, 1);
        for (Index i = 0; i < n; ++i) {
            t(i, 0) = column.at(labels[static_cast<std::size_t>(i)]) == 0 ? 1.0 : -1.0;
        }
        return t;
    }
    Mat t = Mat::Zero(n, static_cast<Index>(classes.size()));
    for (Index i = 0; i < n; ++i) {
        const auto it = column.find(labels[static_cast<std::size_t>(i)]);
        if (it == column.end()) {
            throw ConfigError("label outside the requested classes");
        }
        t(i, it->second) = 1.0;
    }
    return t;
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    const auto img_magic = read_be32(img, 0, images_path);
    if (img_magic != 0x00000803) {
        std::ostringstream msg;
        msg << images_path.string() << ": bad image magic 0x" << std::hex << img_magic;
        throw BadMagic(msg.str());
    }
    const auto lab_magic = read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801) {
        std::ostringstream msg;
        msg << labels_path.string() << ": bad label magic 0x" << std::hex << lab_magic;
        throw BadMagic(msg.str());
    }

    const std::size_t n_images = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n_images != n_labels) {
        throw CountMismatch("image count " + std::to_string(n_images) + " != label count " + std::to_string(n_labels));
    }
    const std::size_t pixels = rows * cols;
    if (img.size() < 16 + n_images * pixels) {
        throw TruncatedFile(images_path.string() + ": pixel payload truncated");
    }
    if (lab.size() < 8 + n_labels) {
        throw TruncatedFile(labels_path.string() + ": label payload truncated");
    }

    LabeledDataset ds;
    ds.name = images_path.filename().string();
    ds.features.resize(static_cast<Index>(n_images), static_cast<Index>(pixels));
    ds.labels.resize(n_images);
    for (std::size_t i = 0; i < n_images; ++i) {
        for (std::size_t p = 0; p < pixels; ++p) {
            ds.features(static_cast<Index>(i), static_cast<Index>(p)) = img[16 + i * pixels + p] / 255.0;
        }
        ds.labels[i] = lab[8 + i];
    }
    ds.classes = observed_classes(ds.labels);
    ds.targets = encode_targets(ds.labels, ds.classes, TargetEncoding::one_hot);
    ds.validate();
    return ds;
}

void write_idx(const LabeledDataset& ds, std::uint32_t rows, std::uint32_t cols,
               const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    if (static_cast<Index>(rows) * cols != ds.input_dim()) {
        throw DimensionMismatch("rows*cols does not match feature dimension");
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    write_be32(img, 0x00000803);
    write_be32(img, static_cast<std::uint32_t>(ds.size()));
    write_be32(img, rows);
    write_be32(img, cols);
    for (Index i = 0; i < ds.size(); ++i) {
        for (Index p = 0; p < ds.input_dim(); ++p) {
            const auto byte = static_cast<unsigned char>(std::lround(ds.features(i, p) * 255.0));
            img.put(static_cast<char>(byte));
        }
    }
    write_be32(lab, 0x00000801);
    write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int label : ds.labels) {
        lab.put(static_cast<char>(static_cast<unsigned char>(label)));
    }
}

LabeledDataset load_cifar_binary(const std::filesystem::path& path) {
    constexpr std::size_t record = 3073;
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % record != 0) {
        throw TruncatedFile(path.string() + ": length " + std::to_string(bytes.size()) +
                            " is not a positive multiple of 3073");
    }
    const std::size_t n = bytes.size() / record;
    LabeledDataset ds;
    ds.name = path.filename().string();
    ds.features.resize(static_cast<Index>(n), 3072);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = bytes[i * record];
        for (std::size_t p = 0; p < 3072; ++p) {
            ds.features(static_cast<Index>(i), static_cast<Index>(p)) = bytes[i * record + 1 + p] / 255.0;
        }
    }
    ds.classes = observed_classes(ds.labels);
    ds.targets = encode_targets(ds.labels, ds.classes, TargetEncoding::one_hot);
    return ds;
}

LabeledDataset subset_per_class(const LabeledDataset& ds, const std::vector<int>& classes, Index per_class,
                                std::uint64_t seed, TargetEncoding encoding) {
    if (per_class <= 0 || classes.empty()) {
        throw EmptyDataset("subset_per_class would produce an empty dataset");
    }
    std::mt19937_64 rng(seed);
    std::vector<Index> order;
    for (int c : classes) {
        std::vector<Index> members;
        for (std::size_t i = 0; i < ds.labels.size(); ++i) {
            if (ds.labels[i] == c) {
                members.push_back(static_cast<Index>(i));
            }
        }
        if (static_cast<Index>(members.size()) < per_class) {
            throw InsufficientClassMembers("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                                           " members, need " + std::to_string(per_class));
        }
        fisher_yates(members, rng);
        members.resize(static_cast<std::size_t>(per_class));
        std::sort(members.begin(), members.end());
        order.insert(order.end(), members.begin(), members.end());
    }
    LabeledDataset out = ds.rows(order);
    out.classes = classes;
    out.encoding = encoding;
    out.targets = encode_targets(out.labels, classes, encoding);
    return out;
}

SplitDataset split_forget(const LabeledDataset& ds, double percent, RemovalScope scope, std::uint64_t seed) {
    std::vector<Index> eligible;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (!scope.class_id || ds.labels[i] == *scope.class_id) {
            eligible.push_back(static_cast<Index>(i));
        }
    }
    const auto forget_count = static_cast<Index>(std::llround(percent / 100.0 * static_cast<double>(eligible.size())));
    if (forget_count <= 0 || forget_count >= ds.size()) {
        throw DegenerateSplit("removing " + std::to_string(percent) + "% leaves an empty forget or retain set");
    }
    std::mt19937_64 rng(seed);
    fisher_yates(eligible, rng);
    std::vector<char> forget(ds.labels.size(), 0);
    for (Index k = 0; k < forget_count; ++k) {
        forget[static_cast<std::size_t>(eligible[static_cast<std::size_t>(k)])] = 1;
    }
    // stable partition: forget rows first, both blocks in original order
    std::vector<Index> order;
    order.reserve(ds.labels.size());
    for (std::size_t i = 0; i < forget.size(); ++i) {
        if (forget[i]) order.push_back(static_cast<Index>(i));
    }
    for (std::size_t i = 0; i < forget.size(); ++i) {
        if (!forget[i]) order.push_back(static_cast<Index>(i));
    }
    SplitDataset split;
    split.full = ds.rows(order);
    split.forget_count = forget_count;
    split.permutation = std::move(order);
    return split;
}

LabeledDataset make_blobs(int n_classes, Index per_class, Index d_in, double spread, std::uint64_t seed,
                          TargetEncoding encoding) {
    if (n_classes < 1 || per_class < 1 || d_in < 1) {
        throw EmptyDataset("make_blobs needs positive sizes");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> centre(0.2, 0.8);
    std::normal_distribution<double> noise(0.0, spread);
    LabeledDataset ds;
    ds.name = "blobs";
    ds.features.resize(n_classes * per_class, d_in);
    ds.labels.resize(static_cast<std::size_t>(n_classes * per_class));
    for (int c = 0; c < n_classes; ++c) {
        Vec mu(d_in);
        for (Index j = 0; j < d_in; ++j) mu(j) = centre(rng);
        for (Index i = 0; i < per_class; ++i) {
            const Index row = c * per_class + i;
            for (Index j = 0; j < d_in; ++j) {
                ds.features(row, j) = std::clamp(mu(j) + noise(rng), 0.0, 1.0);
            }
            ds.labels[static_cast<std::size_t>(row)] = c;
        }
    }
    for (int c = 0; c < n_classes; ++c) ds.classes.push_back(c);
    ds.encoding = encoding;
    ds.targets = encode_targets(ds.labels, ds.classes, encoding);
    return ds;
}

double accuracy(const Mat& outputs, const LabeledDataset& ds) {
    if (outputs.cols() != ds.size() || outputs.rows() != ds.output_dim()) {
        throw DimensionMismatch("accuracy: outputs do not match dataset shape");
    }
    Index hits = 0;
    for (Index i = 0; i < ds.size(); ++i) {
        if (ds.encoding == TargetEncoding::plus_minus_one) {
            hits += (outputs(0, i) >= 0.0) == (ds.targets(i, 0) > 0.0);
        } else {
            Index pred = 0;
            Index truth = 0;
            outputs.col(i).maxCoeff(&pred);
            ds.targets.row(i).maxCoeff(&truth);
            hits += pred == truth;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

std::filesystem::path data_dir() {
    if (const char* env = std::getenv("KINF_DATA_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return "data";
}

}  // namespace kinf

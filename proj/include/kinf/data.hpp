#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kinf/types.hpp"

namespace kinf {

enum class TargetEncoding { one_hot, plus_minus_one };

// Features are N x d_in with values in [0,1]; targets are N x d_out.
// `classes[k]` is the label id that owns target column k (for +/-1 encoding,
// classes[0] maps to +1 and classes[1] to -1).
struct LabeledDataset {
    Mat features;
    Mat targets;
    std::vector<int> labels;
    std::vector<int> classes;
    TargetEncoding encoding = TargetEncoding::one_hot;
    std::string name;

    Index size() const { return features.rows(); }
    Index input_dim() const { return features.cols(); }
    Index output_dim() const { return targets.cols(); }

    // Throws EmptyDataset / DimensionMismatch / ConfigError when an invariant fails.
    void validate() const;

    LabeledDataset rows(const std::vector<Index>& order) const;
    LabeledDataset slice(Index begin, Index end) const;
};

// Rows [0, forget_count) are the forget set, the rest the retain set.
struct SplitDataset {
    LabeledDataset full;
    Index forget_count = 0;
    // original row index of each row in `full` (the applied permutation)
    std::vector<Index> permutation;

    Index retain_count() const { return full.size() - forget_count; }
    LabeledDataset forget_set() const { return full.slice(0, forget_count); }
    LabeledDataset retain_set() const { return full.slice(forget_count, full.size()); }
};

struct RemovalScope {
    std::optional<int> class_id;  // nullopt: remove across all classes

    static RemovalScope all() { return {}; }
    static RemovalScope single(int id) { return {id}; }
};

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
LabeledDataset load_cifar_binary(const std::filesystem::path& path);

// Writes the features (rounded to bytes after *255) and labels in IDX format.
// Used for fixtures; rows x cols must equal the feature dimension.
void write_idx(const LabeledDataset& ds, std::uint32_t rows, std::uint32_t cols,
               const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

LabeledDataset subset_per_class(const LabeledDataset& ds, const std::vector<int>& classes, Index per_class,
                                std::uint64_t seed, TargetEncoding encoding = TargetEncoding::one_hot);

SplitDataset split_forget(const LabeledDataset& ds, double percent, RemovalScope scope, std::uint64_t seed);

// Gaussian clusters clamped to [0,1]; centres drawn uniformly from [0.2,0.8]^d_in.
LabeledDataset make_blobs(int n_classes, Index per_class, Index d_in, double spread, std::uint64_t seed,
                          TargetEncoding encoding = TargetEncoding::one_hot);

// Rebuilds targets for `classes` using the given encoding.
Mat encode_targets(const std::vector<int>& labels, const std::vector<int>& classes, TargetEncoding encoding);

// argmax match for one-hot targets, sign match for +/-1 targets.
double accuracy(const Mat& outputs, const LabeledDataset& ds);

// $KINF_DATA_DIR, or ./data when unset.
std::filesystem::path data_dir();

}  // namespace kinf

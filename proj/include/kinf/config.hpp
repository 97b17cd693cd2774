#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kinf/cg.hpp"
#include "kinf/data.hpp"
#include "kinf/model.hpp"
#include "kinf/training.hpp"

namespace kinf {

enum class SpaceSelection { theta, dual, both };
enum class ColdMode { subprocess, in_process };
enum class DataSource { blobs, mnist, cifar10 };
enum class OptimizerKind { exact, gd, momentum };

SpaceSelection parse_space(const std::string& name);
std::string to_string(SpaceSelection s);

struct DataConfig {
    DataSource source = DataSource::blobs;
    std::vector<int> classes = {0, 1};
    Index per_class = 50;
    Index test_per_class = 10;
    Index input_dim = 16;  // blobs only
    double spread = 0.15;  // blobs only
    TargetEncoding encoding = TargetEncoding::one_hot;
};

// Plain-text configuration, one `key = value` per line, `#` starts a comment.
// Lists are comma separated. Unknown keys are rejected.
struct ExperimentConfig {
    std::string name = "experiment";
    DataConfig data;
    // d_in, hidden..., d_out. d_in and d_out must agree with the dataset.
    ModelSpec model;
    bool linearized = true;
    RiskConfig risk;
    OptimizerKind optimizer = OptimizerKind::exact;
    double lr = 0.1;
    double beta = 0.9;
    StopCriteria stop;
    std::vector<double> percents = {10, 30, 50, 70, 90};
    RemovalScope scope;
    SpaceSelection space = SpaceSelection::both;
    int shards = 0;
    std::vector<std::uint64_t> seeds = {0};
    CgOptions cg;
    ColdMode cold = ColdMode::subprocess;
    std::filesystem::path out_dir = "results";

    std::vector<double> lambdas = {1e-3, 1e-1, 1e1};
    int record_every = 10;

    int ntk_depth = 3;
    double kgd_lr = 0.5;
    int kgd_epochs = 20000;
    double kgd_tol = 1e-8;
    Index test_points = 10;

    std::uint64_t seed() const { return seeds.front(); }

    // Throws ConfigError naming the offending field.
    void validate() const;
    // Round-trips through parse().
    std::string to_text() const;

    static ExperimentConfig parse(std::istream& in);
    static ExperimentConfig parse_text(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);
};

std::vector<double> parse_real_list(const std::string& text);

}  // namespace kinf

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kinf/config.hpp"
#include "kinf/dual.hpp"
#include "kinf/infinite.hpp"
#include "kinf/kernel.hpp"
#include "kinf/primal.hpp"

namespace kinf {

struct Datasets {
    LabeledDataset train;
    LabeledDataset test;
};

// Synthetic blobs share their centres between train and test. MNIST and
// CIFAR-10 are read from data_dir().
Datasets load_datasets(const ExperimentConfig& cfg);

enum class Space { theta, dual };
std::string to_string(Space s);
std::vector<Space> spaces_of(SpaceSelection s);

inline constexpr int kWarmRuns = 5;

struct MetricsRow {
    double percent = 0.0;
    std::string space;
    double cold_runtime = 0.0;
    double warm_runtime_mean = 0.0;
    double warm_runtime_std = 0.0;
    double rel_l2 = 0.0;
    double forget_acc_unlearned = 0.0;
    double forget_acc_retrained = 0.0;
    double baseline_rel_l2 = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
// Every metrics.csv one level below `dir`, ordered by path.
std::vector<MetricsRow> collect_metrics(const std::filesystem::path& dir);

std::string influence_csv_header();
void write_influence_csv(const std::filesystem::path& path, const ChangePrediction& changes);
std::string train_report_csv_header();
void write_train_report_csv(const std::filesystem::path& path, const TrainReport& report);

// theta_star + eps, |eps| = |theta_star - theta_retrained|, direction uniform
// on the sphere.
Vec random_perturbation_baseline(const Vec& theta_star, const Vec& theta_retrained, std::uint64_t seed);
ParamVector random_perturbation_baseline(const ParamVector& theta_star, const ParamVector& theta_retrained,
                                         std::uint64_t seed);

double relative_l2(const Vec& a, const Vec& reference);

// One unlearning execution: everything after the trained parameters and the
// stored training kernel are available.
struct UnlearningOutcome {
    Vec theta_unlearned;
    double seconds = 0.0;
    std::optional<InfluenceReport> primal;
    std::optional<DualSolve> dual;
    KernelMatrix split_kernel;  // dual only: training kernel in split order
};

class UnlearningExperiment {
public:
    explicit UnlearningExperiment(ExperimentConfig cfg);

    const ExperimentConfig& config() const { return cfg_; }
    const Datasets& data() const { return data_; }
    const Predictor& predictor() const { return *predictor_; }

    // Trains theta* and, when the dual space is selected, computes the
    // training kernel. With use_cache the stored artefacts from a previous
    // prepare() are loaded when present; otherwise they are recomputed and
    // stored.
    void prepare(bool use_cache);
    const Vec& theta_star() const;
    const Vec& kernel_reference() const;
    const KernelMatrix& train_kernel() const;

    SplitDataset split(double percent) const;
    Vec retrain(const SplitDataset& split) const;
    UnlearningOutcome execute(const SplitDataset& split, Space space) const;
    // First timed execution in this process.
    double cold_run(double percent, Space space) const;

    // Full protocol over every percent and space. Cold starts run through
    // `cli` (`<cli> unlearn --cold ...`) when given and the config asks for
    // subprocesses, else in process.
    std::vector<MetricsRow> run(const std::optional<std::filesystem::path>& cli = std::nullopt);

    std::filesystem::path experiment_dir() const { return cfg_.out_dir / cfg_.name; }
    std::filesystem::path cell_dir(double percent, Space space) const;

private:
    Vec train_full() const;
    double spawn_cold(double percent, Space space) const;

    ExperimentConfig cfg_;
    Datasets data_;
    std::optional<Predictor> predictor_;
    std::optional<Vec> theta_star_;
    std::optional<Vec> kernel_ref_;
    std::optional<KernelMatrix> kernel_;
    std::filesystem::path cli_path_;
};

std::vector<MetricsRow> run_unlearning_experiment(const ExperimentConfig& cfg,
                                                  const std::optional<std::filesystem::path>& cli = std::nullopt);

// Trains the configured predictor on the full training set, writes
// train_report.csv and theta.bin under <out>/<name>/train.
TrainReport run_training(const ExperimentConfig& cfg);

struct SweepPoint {
    int epoch = 0;
    double rel_param_distance = 0.0;
    double output_rmse = 0.0;
    double test_acc_model = 0.0;
    double test_acc_linearized = 0.0;
    double grad_norm_model = 0.0;
    double grad_norm_linearized = 0.0;
};

struct SweepSeries {
    double lambda = 0.0;
    std::vector<SweepPoint> points;
};

std::string sweep_csv_header();
void write_sweep_csv(const std::filesystem::path& path, const SweepSeries& series);

// Network and its linearization around the shared initialisation, trained
// side by side with the configured optimiser for stop.max_epochs epochs.
// Writes <out>/<name>/sweep/lambda_<value>.csv.
std::vector<SweepSeries> run_lambda_sweep(const ExperimentConfig& cfg, const std::vector<double>& lambdas);

struct AgreementStats {
    double pearson = 0.0;
    double max_abs_error = 0.0;
    double actual_range = 0.0;
};
AgreementStats compare_estimates(const Vec& estimated, const Vec& actual);

struct InfiniteRow {
    Index test_index = 0;
    Index output_dim = 0;
    double estimated_output_change = 0.0;
    double actual_output_change = 0.0;
    double estimated_loss_change = 0.0;
    double actual_loss_change = 0.0;
};

struct InfiniteExperimentResult {
    InfiniteInfluence influence;
    std::vector<InfiniteRow> rows;
    AgreementStats outputs;
    AgreementStats losses;  // raw loss changes
};

std::string infinite_csv_header();
// Analytic-kernel removal of the first configured percent; the first
// ntk.test_points test inputs are scored. Writes <out>/<name>/infinite/.
InfiniteExperimentResult run_infinite_experiment(const ExperimentConfig& cfg);

}  // namespace kinf

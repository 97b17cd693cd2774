#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kinf/bench.hpp"
#include "kinf/errors.hpp"

namespace fs = std::filesystem;
using namespace kinf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Overrides {
    std::string config;
    std::string space;
    std::string percent;
    int shards = -1;
    long long seed = -1;
    std::string out;
};

ExperimentConfig load_config(const Overrides& o) {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig::parse_text("") : ExperimentConfig::load(o.config);
    if (!o.space.empty()) cfg.space = parse_space(o.space);
    if (!o.percent.empty()) cfg.percents = parse_real_list(o.percent);
    if (o.shards >= 0) cfg.shards = o.shards;
    if (o.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(o.seed)};
    if (!o.out.empty()) cfg.out_dir = o.out;
    cfg.validate();
    return cfg;
}

void print_rows(const std::vector<MetricsRow>& rows) {
    std::cout << metrics_csv_header() << "\n";
    for (const auto& r : rows) std::cout << metrics_csv_line(r) << "\n";
}

int cmd_train(const Overrides& o) {
    const ExperimentConfig cfg = load_config(o);
    const TrainReport r = run_training(cfg);
    std::cout << "epochs " << r.epochs_run << "  loss " << r.loss_history.back() << "  grad_norm "
              << r.grad_norm_history.back() << "  converged " << (r.converged ? "yes" : "no") << "\n"
              << "wrote " << (cfg.out_dir / cfg.name / "train").string() << "\n";
    return 0;
}

int cmd_unlearn(const Overrides& o, bool cold) {
    const ExperimentConfig cfg = load_config(o);
    if (!cold) {
        print_rows(run_unlearning_experiment(cfg, fs::read_symlink("/proc/self/exe")));
        return 0;
    }
    if (cfg.percents.size() != 1 || cfg.space == SpaceSelection::both) {
        throw ConfigError("--cold needs exactly one percent and --space theta or dual");
    }
    UnlearningExperiment exp(cfg);
    exp.prepare(true);
    const Space space = cfg.space == SpaceSelection::theta ? Space::theta : Space::dual;
    const double t = exp.cold_run(cfg.percents.front(), space);
    std::cout << nlohmann::json{{"percent", cfg.percents.front()}, {"space", to_string(space)}, {"cold_runtime", t}}
                     .dump()
              << std::endl;
    return 0;
}

int cmd_sweep(const Overrides& o) {
    const ExperimentConfig cfg = load_config(o);
    const auto series = run_lambda_sweep(cfg, cfg.lambdas);
    std::cout << "lambda,rel_param_distance,output_rmse,test_acc_model,test_acc_linearized,grad_norm_model,"
                 "grad_norm_linearized\n";
    for (const auto& s : series) {
        const SweepPoint& p = s.points.back();
        std::cout << s.lambda << "," << p.rel_param_distance << "," << p.output_rmse << "," << p.test_acc_model << ","
                  << p.test_acc_linearized << "," << p.grad_norm_model << "," << p.grad_norm_linearized << "\n";
    }
    return 0;
}

int cmd_infinite(const Overrides& o) {
    const ExperimentConfig cfg = load_config(o);
    const InfiniteExperimentResult r = run_infinite_experiment(cfg);
    std::cout << infinite_csv_header() << "\n";
    for (const auto& row : r.rows) {
        std::cout << row.test_index << "," << row.output_dim << "," << row.estimated_output_change << ","
                  << row.actual_output_change << "," << row.estimated_loss_change << "," << row.actual_loss_change
                  << "\n";
    }
    std::cout << "# outputs: pearson " << r.outputs.pearson << ", max abs error " << r.outputs.max_abs_error
              << ", range " << r.outputs.actual_range << "\n"
              << "# losses:  pearson " << r.losses.pearson << ", max abs error " << r.losses.max_abs_error
              << ", range " << r.losses.actual_range << "\n";
    return 0;
}

int cmd_report(const Overrides& o) {
    fs::path dir = o.out;
    if (!o.config.empty()) {
        const ExperimentConfig cfg = load_config(o);
        dir = cfg.out_dir / cfg.name;
    }
    if (dir.empty()) throw ConfigError("report needs --out <experiment dir> or --config");
    const fs::path combined = dir / "metrics.csv";
    print_rows(fs::exists(combined) ? read_metrics_csv(combined) : collect_metrics(dir));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Influence-function unlearning in parameter and kernel space"};
    app.require_subcommand(1);
    Overrides o;
    bool cold = false;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "key = value configuration file");
        sub->add_option("--seed", o.seed, "override the seed list with one seed");
        sub->add_option("--out", o.out, "output directory");
    };
    auto* train = app.add_subcommand("train", "train the configured model and write its report");
    common(train);
    auto* unlearn = app.add_subcommand("unlearn", "run the removal experiment");
    common(unlearn);
    unlearn->add_option("--space", o.space, "theta, dual or both")->check(CLI::IsMember({"theta", "dual", "both"}));
    unlearn->add_option("--percent", o.percent, "comma-separated removal percents");
    unlearn->add_option("--shards", o.shards, "kernel shards for the dual solve (0 = unsharded)");
    unlearn->add_flag("--cold", cold, "time one unlearning run in this fresh process and print it as JSON");
    auto* sweep = app.add_subcommand("sweep-lambda", "train a network and its linearization for each lambda");
    common(sweep);
    auto* infinite = app.add_subcommand("ntk-infinite", "removal with the analytic infinite-width kernel");
    common(infinite);
    infinite->add_option("--percent", o.percent, "removal percent");
    auto* report = app.add_subcommand("report", "print collected metrics");
    common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (train->parsed()) return cmd_train(o);
        if (unlearn->parsed()) return cmd_unlearn(o, cold);
        if (sweep->parsed()) return cmd_sweep(o);
        if (infinite->parsed()) return cmd_infinite(o);
        if (report->parsed()) return cmd_report(o);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

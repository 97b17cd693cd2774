#include "kinf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "kinf/errors.hpp"

namespace fs = std::filesystem;

namespace kinf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// compact form for directory and file names
std::string short_fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    return out;
}

Optimizer make_optimizer(const ExperimentConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::momentum) return Momentum{cfg.lr, cfg.beta};
    return GradientDescent{cfg.lr};
}

Predictor make_predictor(const ExperimentConfig& cfg, bool linearized) {
    ModelSpec spec = cfg.model;
    spec.init_seed = cfg.seed();
    Mlp mlp(spec);
    Vec theta0 = mlp.init_params().values;
    return linearized ? Predictor::linearized(std::move(mlp), std::move(theta0))
                      : Predictor::network(std::move(mlp), std::move(theta0));
}

Vec fit(const Predictor& p, const LabeledDataset& ds, const ExperimentConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::exact) return fit_linearized(p, ds, cfg.risk).values;
    return train(p, ds, cfg.risk, make_optimizer(cfg), cfg.stop, p.reference()).final_params.values;
}

Mat outputs_at(const Predictor& p, const Vec& theta, const Mat& X) {
    return BatchModel(p, X).outputs(theta);
}

// Lines of the config that determine theta* and the training kernel.
std::string training_fingerprint(const ExperimentConfig& cfg) {
    std::istringstream in(cfg.to_text());
    std::string line, out;
    while (std::getline(in, line)) {
        for (const char* prefix : {"data.", "model.", "risk.", "opt.", "stop."}) {
            if (line.rfind(prefix, 0) == 0) out += line + "\n";
        }
    }
    return out + "seed = " + std::to_string(cfg.seed()) + "\n";
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

std::vector<Index> iota_indices(Index n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    return idx;
}

LabeledDataset relabel(LabeledDataset ds, const std::vector<int>& classes, TargetEncoding encoding) {
    for (auto& l : ds.labels) l = classes[static_cast<std::size_t>(l)];
    ds.classes = classes;
    ds.encoding = encoding;
    ds.targets = encode_targets(ds.labels, ds.classes, encoding);
    return ds;
}

}  // namespace

Datasets load_datasets(const ExperimentConfig& cfg) {
    const DataConfig& d = cfg.data;
    Datasets out;
    if (d.source == DataSource::blobs) {
        const auto k = static_cast<int>(d.classes.size());
        const LabeledDataset all = relabel(
            make_blobs(k, d.per_class + d.test_per_class, d.input_dim, d.spread, cfg.seed(), d.encoding), d.classes,
            d.encoding);
        std::vector<Index> tr, te;
        const Index per = d.per_class + d.test_per_class;
        for (Index i = 0; i < all.size(); ++i) (i % per < d.per_class ? tr : te).push_back(i);
        out.train = all.rows(tr);
        out.test = all.rows(te);
        return out;
    }
    const fs::path dir = data_dir();
    LabeledDataset train_all, test_all;
    if (d.source == DataSource::mnist) {
        train_all = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
        test_all = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    } else {
        train_all = load_cifar_binary(dir / "data_batch_1.bin");
        test_all = load_cifar_binary(dir / "test_batch.bin");
    }
    out.train = subset_per_class(train_all, d.classes, d.per_class, cfg.seed(), d.encoding);
    out.test = subset_per_class(test_all, d.classes, d.test_per_class, cfg.seed() + 1, d.encoding);
    return out;
}

std::string to_string(Space s) { return s == Space::theta ? "theta" : "dual"; }

std::vector<Space> spaces_of(SpaceSelection s) {
    switch (s) {
        case SpaceSelection::theta: return {Space::theta};
        case SpaceSelection::dual: return {Space::dual};
        case SpaceSelection::both: break;
    }
    return {Space::theta, Space::dual};
}

std::string metrics_csv_header() {
    return "percent,space,cold_runtime,warm_runtime_mean,warm_runtime_std,rel_l2,forget_acc_unlearned,"
           "forget_acc_retrained,baseline_rel_l2";
}

std::string metrics_csv_line(const MetricsRow& r) {
    return fmt(r.percent) + "," + r.space + "," + fmt(r.cold_runtime) + "," + fmt(r.warm_runtime_mean) + "," +
           fmt(r.warm_runtime_std) + "," + fmt(r.rel_l2) + "," + fmt(r.forget_acc_unlearned) + "," +
           fmt(r.forget_acc_retrained) + "," + fmt(r.baseline_rel_l2);
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
    auto out = open_out(path);
    out << metrics_csv_header() << "\n";
    for (const auto& r : rows) out << metrics_csv_line(r) << "\n";
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != metrics_csv_header()) throw ConfigError(path.string() + " is not a metrics file");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 9) throw ConfigError(path.string() + ": malformed row '" + line + "'");
        MetricsRow r;
        r.percent = std::stod(f[0]);
        r.space = f[1];
        r.cold_runtime = std::stod(f[2]);
        r.warm_runtime_mean = std::stod(f[3]);
        r.warm_runtime_std = std::stod(f[4]);
        r.rel_l2 = std::stod(f[5]);
        r.forget_acc_unlearned = std::stod(f[6]);
        r.forget_acc_retrained = std::stod(f[7]);
        r.baseline_rel_l2 = std::stod(f[8]);
        rows.push_back(r);
    }
    return rows;
}

std::vector<MetricsRow> collect_metrics(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const fs::path f = entry.path() / "metrics.csv";
        if (entry.is_directory() && fs::exists(f)) files.push_back(f);
    }
    std::sort(files.begin(), files.end());
    std::vector<MetricsRow> rows;
    for (const auto& f : files) {
        auto part = read_metrics_csv(f);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

std::string influence_csv_header() {
    return "test_index,output_dim,output_change,loss_change_raw,loss_change_regularized";
}

void write_influence_csv(const fs::path& path, const ChangePrediction& c) {
    auto out = open_out(path);
    out << influence_csv_header() << "\n";
    for (Index i = 0; i < c.output_change.cols(); ++i) {
        for (Index k = 0; k < c.output_change.rows(); ++k) {
            out << i << "," << k << "," << fmt(c.output_change(k, i)) << "," << fmt(c.loss_change_raw(i)) << ","
                << fmt(c.loss_change_regularized(i)) << "\n";
        }
    }
}

std::string train_report_csv_header() { return "epoch,loss,grad_norm"; }

void write_train_report_csv(const fs::path& path, const TrainReport& report) {
    auto out = open_out(path);
    out << train_report_csv_header() << "\n";
    for (std::size_t e = 0; e < report.loss_history.size(); ++e) {
        out << e << "," << fmt(report.loss_history[e]) << "," << fmt(report.grad_norm_history[e]) << "\n";
    }
}

Vec random_perturbation_baseline(const Vec& theta_star, const Vec& theta_retrained, std::uint64_t seed) {
    if (theta_star.size() != theta_retrained.size()) throw DimensionMismatch("baseline: parameter sizes differ");
    const double radius = (theta_star - theta_retrained).norm();
    if (!std::isfinite(radius)) throw NonFiniteEncountered("baseline: displacement norm is not finite");
    if (radius == 0.0) return theta_star;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Vec eps(theta_star.size());
    double n = 0.0;
    while (n == 0.0) {
        for (Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
        n = eps.norm();
    }
    return theta_star + (radius / n) * eps;
}

ParamVector random_perturbation_baseline(const ParamVector& theta_star, const ParamVector& theta_retrained,
                                         std::uint64_t seed) {
    return {theta_star.layout, random_perturbation_baseline(theta_star.values, theta_retrained.values, seed)};
}

double relative_l2(const Vec& a, const Vec& reference) {
    if (a.size() != reference.size()) throw DimensionMismatch("relative_l2: sizes differ");
    return (a - reference).norm() / reference.norm();
}

UnlearningExperiment::UnlearningExperiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    data_ = load_datasets(cfg_);
    predictor_ = make_predictor(cfg_, cfg_.linearized);
}

fs::path UnlearningExperiment::cell_dir(double percent, Space space) const {
    return experiment_dir() / ("p" + short_fmt(percent) + "_" + to_string(space));
}

Vec UnlearningExperiment::train_full() const { return fit(*predictor_, data_.train, cfg_); }

void UnlearningExperiment::prepare(bool use_cache) {
    const fs::path cache = experiment_dir() / "cache";
    const fs::path theta_file = cache / "theta_star.bin";
    const fs::path kernel_file = cache / "train_kernel.kinfk";
    const fs::path stamp = cache / "fingerprint.txt";
    const std::string fingerprint = training_fingerprint(cfg_);
    const bool cache_ok = use_cache && fs::exists(stamp) && read_file(stamp) == fingerprint;
    fs::create_directories(cache);
    if (!cache_ok) {
        fs::remove(kernel_file);
        open_out(stamp) << fingerprint;
    }

    const ModelSpec& spec = predictor_->model().spec();
    if (cache_ok && fs::exists(theta_file)) {
        theta_star_ = load_params(theta_file, spec).values;
    } else {
        theta_star_ = train_full();
        save_params(theta_file, ParamVector{predictor_->model().layout(), *theta_star_}, spec);
    }
    kernel_ref_ = predictor_->is_linearized() ? predictor_->reference() : *theta_star_;

    const auto spaces = spaces_of(cfg_.space);
    if (std::find(spaces.begin(), spaces.end(), Space::dual) == spaces.end()) return;
    if (cache_ok && fs::exists(kernel_file)) {
        kernel_ = load_kernel(kernel_file);
        if (kernel_->row_points() != data_.train.size() || kernel_->source().spec_hash != spec.hash()) {
            throw ConfigError("cached kernel does not match the experiment");
        }
    } else {
        kernel_ = empirical_ntk(predictor_->model(), *kernel_ref_, data_.train.features);
        save_kernel(kernel_file, *kernel_);
    }
}

const Vec& UnlearningExperiment::theta_star() const {
    if (!theta_star_) throw ConfigError("prepare() has not been called");
    return *theta_star_;
}

const Vec& UnlearningExperiment::kernel_reference() const {
    if (!kernel_ref_) throw ConfigError("prepare() has not been called");
    return *kernel_ref_;
}

const KernelMatrix& UnlearningExperiment::train_kernel() const {
    if (!kernel_) throw ConfigError("the training kernel is only prepared when the dual space is selected");
    return *kernel_;
}

SplitDataset UnlearningExperiment::split(double percent) const {
    return split_forget(data_.train, percent, cfg_.scope, cfg_.seed());
}

Vec UnlearningExperiment::retrain(const SplitDataset& split) const {
    return fit(*predictor_, split.retain_set(), cfg_);
}

UnlearningOutcome UnlearningExperiment::execute(const SplitDataset& split, Space space) const {
    const Vec& ts = theta_star();
    const auto t0 = Clock::now();
    UnlearningOutcome out;
    if (space == Space::theta) {
        const PrimalUnlearner unlearner(*predictor_, ts, split, cfg_.risk, cfg_.cg);
        InfluenceReport rep = unlearner.solve();
        out.theta_unlearned = ts + rep.delta_theta;
        out.primal = std::move(rep);
    } else {
        const Mlp& model = predictor_->model();
        const Vec& ref = kernel_reference();
        out.split_kernel = permute_points(train_kernel(), split.permutation, split.permutation);
        const Tape tape = model.record(ref, split.full.features);
        Mat F = tape.outputs();
        if (predictor_->is_linearized()) F += model.jvp(tape, ts - ref);
        const DualSystem sys(out.split_kernel, std::move(F), split.full.targets.transpose(), split.forget_count,
                             cfg_.risk, cfg_.shards);
        DualSolve s = sys.solve_reduced(cfg_.cg);
        out.theta_unlearned = map_to_params(model, tape, ts, s.coefficients.delta_alpha);
        out.dual = std::move(s);
    }
    out.seconds = seconds_since(t0);
    return out;
}

double UnlearningExperiment::cold_run(double percent, Space space) const {
    return execute(split(percent), space).seconds;
}

double UnlearningExperiment::spawn_cold(double percent, Space space) const {
    const fs::path snapshot = cell_dir(percent, space) / "config.cfg";
    const std::string cmd = shell_quote(cli_path_.string()) + " unlearn --config " + shell_quote(snapshot.string()) +
                            " --percent " + fmt(percent) + " --space " + to_string(space) + " --cold";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw Error("cannot start cold-start process");
    std::string output;
    char buf[4096];
    while (std::fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = pclose(pipe);
    if (status != 0) throw NumericalError("cold-start process failed: " + cmd);
    std::istringstream lines(output);
    std::string line, last;
    while (std::getline(lines, line)) {
        if (!line.empty()) last = line;
    }
    try {
        return nlohmann::json::parse(last).at("cold_runtime").get<double>();
    } catch (const std::exception&) {
        throw NumericalError("cold-start process printed no timing: " + last);
    }
}

std::vector<MetricsRow> UnlearningExperiment::run(const std::optional<fs::path>& cli) {
    prepare(false);
    const bool subprocess = cfg_.cold == ColdMode::subprocess && cli.has_value();
    if (subprocess) cli_path_ = *cli;
    open_out(experiment_dir() / "config.cfg") << cfg_.to_text();

    const Vec& ts = theta_star();
    const auto spaces = spaces_of(cfg_.space);
    const bool need_dual = std::find(spaces.begin(), spaces.end(), Space::dual) != spaces.end();
    const Mat test_outputs = outputs_at(*predictor_, ts, data_.test.features);
    std::optional<KernelMatrix> test_kernel;
    if (need_dual) {
        test_kernel = empirical_ntk(predictor_->model(), kernel_reference(), data_.test.features, data_.train.features);
    }

    std::vector<MetricsRow> rows;
    for (std::size_t pi = 0; pi < cfg_.percents.size(); ++pi) {
        const double percent = cfg_.percents[pi];
        const SplitDataset sp = split(percent);
        const Vec theta_r = retrain(sp);
        const LabeledDataset forget = sp.forget_set();
        const double acc_retrained = accuracy(outputs_at(*predictor_, theta_r, forget.features), forget);
        double baseline = 0.0;
        for (std::uint64_t seed : cfg_.seeds) {
            baseline += relative_l2(random_perturbation_baseline(ts, theta_r, seed * 1000003ULL + pi), theta_r);
        }
        baseline /= static_cast<double>(cfg_.seeds.size());

        for (Space space : spaces) {
            const fs::path cell = cell_dir(percent, space);
            fs::create_directories(cell);
            open_out(cell / "config.cfg") << cfg_.to_text();

            double cold = 0.0;
            if (subprocess) {
                cold = spawn_cold(percent, space);
                execute(sp, space);  // absorbs this process's one-time costs
            } else {
                cold = execute(sp, space).seconds;
            }
            std::vector<double> warm;
            std::optional<UnlearningOutcome> last;
            for (int r = 0; r < kWarmRuns; ++r) {
                last = execute(sp, space);
                warm.push_back(last->seconds);
            }
            const double mean = std::accumulate(warm.begin(), warm.end(), 0.0) / kWarmRuns;
            double var = 0.0;
            for (double w : warm) var += (w - mean) * (w - mean);

            MetricsRow row;
            row.percent = percent;
            row.space = to_string(space);
            row.cold_runtime = cold;
            row.warm_runtime_mean = mean;
            row.warm_runtime_std = std::sqrt(var / (kWarmRuns - 1));
            row.rel_l2 = relative_l2(last->theta_unlearned, theta_r);
            row.forget_acc_unlearned =
                accuracy(outputs_at(*predictor_, last->theta_unlearned, forget.features), forget);
            row.forget_acc_retrained = acc_retrained;
            row.baseline_rel_l2 = baseline;
            rows.push_back(row);
            write_metrics_csv(cell / "metrics.csv", {row});

            nlohmann::json diag;
            diag["event"] = "solve";
            diag["space"] = row.space;
            diag["percent"] = percent;
            diag["forget_count"] = sp.forget_count;
            ChangePrediction changes;
            if (space == Space::theta) {
                InfluenceReport& rep = *last->primal;
                rep.wall_cold = cold;
                rep.wall_warm = warm;
                diag["iters"] = rep.iters;
                diag["residual"] = rep.residual;
                diag["rhs_norm"] = rep.rhs_norm;
                diag["max_iters_reached"] = rep.max_iters_reached;
                diag["not_at_optimum"] = rep.not_at_optimum;
                diag["stationarity"] = rep.stationarity;
                changes = predict_changes_primal(*predictor_, ts, rep.delta_theta, data_.test, cfg_.risk);
            } else {
                const DualSolve& s = *last->dual;
                diag["iters"] = s.iters;
                diag["residual"] = s.residual;
                diag["dense"] = s.dense;
                diag["max_iters_reached"] = s.max_iters_reached;
                diag["shard_seconds"] = s.shard_seconds;
                const KernelMatrix Kt =
                    permute_points(*test_kernel, iota_indices(data_.test.size()), sp.permutation);
                changes = predict_changes_dual(Kt, last->split_kernel, s.coefficients.delta_alpha,
                                               s.coefficients.alpha_star, test_outputs,
                                               data_.test.targets.transpose(), cfg_.risk);
            }
            write_influence_csv(cell / "influence.csv", changes);
            auto diag_out = open_out(cell / "diagnostics.jsonl");
            diag_out << diag.dump() << "\n";
            nlohmann::json timing = {{"event", "timing"}, {"cold", cold}, {"warm", warm}};
            diag_out << timing.dump() << "\n";
        }
    }
    write_metrics_csv(experiment_dir() / "metrics.csv", rows);
    return rows;
}

std::vector<MetricsRow> run_unlearning_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& cli) {
    UnlearningExperiment exp(cfg);
    return exp.run(cli);
}

TrainReport run_training(const ExperimentConfig& cfg) {
    cfg.validate();
    const Datasets data = load_datasets(cfg);
    const Predictor p = make_predictor(cfg, cfg.linearized);
    TrainReport report;
    if (cfg.optimizer == OptimizerKind::exact) {
        const auto t0 = Clock::now();
        report.final_params = fit_linearized(p, data.train, cfg.risk);
        report.wall_time = seconds_since(t0);
        const Risk risk(p, data.train, cfg.risk);
        Vec g;
        report.loss_history.push_back(risk.value_and_grad(report.final_params.values, g));
        report.grad_norm_history.push_back(g.norm());
        report.converged = g.norm() <= std::max(cfg.stop.grad_tol, kStationarityThreshold);
    } else {
        report = train(p, data.train, cfg.risk, make_optimizer(cfg), cfg.stop, p.reference());
    }
    const fs::path dir = cfg.out_dir / cfg.name / "train";
    write_train_report_csv(dir / "train_report.csv", report);
    save_params(dir / "theta.bin", report.final_params, p.model().spec());
    return report;
}

std::string sweep_csv_header() {
    return "epoch,rel_param_distance,output_rmse,test_acc_model,test_acc_linearized,grad_norm_model,"
           "grad_norm_linearized";
}

void write_sweep_csv(const fs::path& path, const SweepSeries& series) {
    auto out = open_out(path);
    out << sweep_csv_header() << "\n";
    for (const auto& p : series.points) {
        out << p.epoch << "," << fmt(p.rel_param_distance) << "," << fmt(p.output_rmse) << ","
            << fmt(p.test_acc_model) << "," << fmt(p.test_acc_linearized) << "," << fmt(p.grad_norm_model) << ","
            << fmt(p.grad_norm_linearized) << "\n";
    }
}

std::vector<SweepSeries> run_lambda_sweep(const ExperimentConfig& cfg, const std::vector<double>& lambdas) {
    cfg.validate();
    if (lambdas.size() < 2) throw ConfigError("a lambda sweep needs at least two values");
    const Datasets data = load_datasets(cfg);
    const Predictor net = make_predictor(cfg, false);
    const Predictor lin = make_predictor(cfg, true);
    const BatchModel net_test(net, data.test.features);
    const BatchModel lin_test(lin, data.test.features);
    const Optimizer opt = make_optimizer(cfg);

    std::vector<SweepSeries> out;
    for (double lambda : lambdas) {
        RiskConfig rc = cfg.risk;
        rc.lambda = lambda;
        const Risk net_risk(net, data.train, rc);
        const Risk lin_risk(lin, data.train, rc);
        Trainer tn(net_risk, opt, net.reference());
        Trainer tl(lin_risk, opt, lin.reference());
        SweepSeries series;
        series.lambda = lambda;
        const auto record = [&](int epoch) {
            SweepPoint p;
            p.epoch = epoch;
            p.rel_param_distance = relative_l2(tn.params(), tl.params());
            const Mat fn = net_test.outputs(tn.params());
            const Mat fl = lin_test.outputs(tl.params());
            p.output_rmse = std::sqrt((fn - fl).squaredNorm() / static_cast<double>(fn.size()));
            p.test_acc_model = accuracy(fn, data.test);
            p.test_acc_linearized = accuracy(fl, data.test);
            p.grad_norm_model = net_risk.grad(tn.params()).norm();
            p.grad_norm_linearized = lin_risk.grad(tl.params()).norm();
            series.points.push_back(p);
        };
        record(0);
        for (int e = 1; e <= cfg.stop.max_epochs; ++e) {
            tn.step();
            tl.step();
            if (e % cfg.record_every == 0 || e == cfg.stop.max_epochs) record(e);
        }
        write_sweep_csv(cfg.out_dir / cfg.name / "sweep" / ("lambda_" + short_fmt(lambda) + ".csv"), series);
        out.push_back(std::move(series));
    }
    return out;
}

AgreementStats compare_estimates(const Vec& estimated, const Vec& actual) {
    if (estimated.size() != actual.size() || actual.size() == 0) {
        throw DimensionMismatch("compare_estimates: sizes differ or are empty");
    }
    AgreementStats s;
    s.max_abs_error = (estimated - actual).cwiseAbs().maxCoeff();
    s.actual_range = actual.maxCoeff() - actual.minCoeff();
    const Vec a = estimated.array() - estimated.mean();
    const Vec b = actual.array() - actual.mean();
    const double denom = a.norm() * b.norm();
    s.pearson = denom > 0.0 ? a.dot(b) / denom : (s.max_abs_error == 0.0 ? 1.0 : 0.0);
    return s;
}

std::string infinite_csv_header() {
    return "test_index,output_dim,estimated_output_change,actual_output_change,estimated_loss_change,"
           "actual_loss_change";
}

InfiniteExperimentResult run_infinite_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const Datasets data = load_datasets(cfg);
    const SplitDataset sp = split_forget(data.train, cfg.percents.front(), cfg.scope, cfg.seed());
    const LabeledDataset test = data.test.slice(0, std::min(cfg.test_points, data.test.size()));
    const AnalyticNtkSpec spec{cfg.ntk_depth, cfg.model.sigma_w2, cfg.model.sigma_b2, data.train.output_dim()};
    const KernelMatrix K = analytic_ntk(spec, sp.full.features);
    const KernelMatrix Kt = analytic_ntk(spec, test.features, sp.full.features);

    InfiniteExperimentResult res;
    res.influence =
        infinite_influence(K, Kt, sp, test, cfg.risk, KgdOptions{cfg.kgd_lr, cfg.kgd_epochs, cfg.kgd_tol}, cfg.cg);
    const ChangePrediction& est = res.influence.estimated;
    const ChangePrediction& act = res.influence.actual;
    for (Index i = 0; i < est.output_change.cols(); ++i) {
        for (Index k = 0; k < est.output_change.rows(); ++k) {
            res.rows.push_back({i, k, est.output_change(k, i), act.output_change(k, i), est.loss_change_raw(i),
                                act.loss_change_raw(i)});
        }
    }
    res.outputs = compare_estimates(flatten(est.output_change), flatten(act.output_change));
    res.losses = compare_estimates(est.loss_change_raw, act.loss_change_raw);

    const fs::path dir = cfg.out_dir / cfg.name / "infinite";
    auto csv = open_out(dir / "estimates.csv");
    csv << infinite_csv_header() << "\n";
    for (const auto& r : res.rows) {
        csv << r.test_index << "," << r.output_dim << "," << fmt(r.estimated_output_change) << ","
            << fmt(r.actual_output_change) << "," << fmt(r.estimated_loss_change) << ","
            << fmt(r.actual_loss_change) << "\n";
    }
    const nlohmann::json summary = {
        {"output_pearson", res.outputs.pearson},
        {"output_max_abs_error", res.outputs.max_abs_error},
        {"output_actual_range", res.outputs.actual_range},
        {"loss_pearson", res.losses.pearson},
        {"loss_max_abs_error", res.losses.max_abs_error},
        {"loss_actual_range", res.losses.actual_range},
        {"stationarity_full", res.influence.full_state.stationarity_residual},
        {"stationarity_retain", res.influence.retain_state.stationarity_residual},
        {"kgd_epochs_full", res.influence.full_state.epoch},
        {"kgd_epochs_retain", res.influence.retain_state.epoch},
    };
    open_out(dir / "summary.json") << summary.dump(2) << "\n";
    return res;
}

}  // namespace kinf

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kinf/bench.hpp"
#include "kinf/errors.hpp"

namespace py = pybind11;
using namespace kinf;

namespace {

TargetEncoding parse_encoding(const std::string& name) {
    if (name == "one_hot") return TargetEncoding::one_hot;
    if (name == "plus_minus_one") return TargetEncoding::plus_minus_one;
    throw ConfigError("unknown encoding '" + name + "'");
}

ModelSpec make_spec(const std::vector<Index>& widths, std::uint64_t seed, const std::string& activation) {
    ModelSpec spec;
    spec.widths = widths;
    spec.init_seed = seed;
    if (activation == "identity") {
        spec.activation = Activation::identity;
    } else if (activation != "relu") {
        throw ConfigError("unknown activation '" + activation + "'");
    }
    spec.validate();
    return spec;
}

RiskConfig make_risk(double lambda, const std::string& loss) {
    RiskConfig cfg{lambda, Center::reference, parse_loss(loss)};
    cfg.validate();
    return cfg;
}

LabeledDataset make_dataset(const Mat& X, const Mat& Y) {
    LabeledDataset ds;
    ds.features = X;
    ds.targets = Y;
    if (X.rows() != Y.rows()) throw DimensionMismatch("features and targets disagree on the number of points");
    ds.labels.resize(static_cast<std::size_t>(X.rows()));
    for (Index i = 0; i < Y.rows(); ++i) {
        Index k = 0;
        if (Y.cols() > 1) Y.row(i).maxCoeff(&k);
        else k = Y(i, 0) > 0 ? 0 : 1;
        ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
    }
    for (Index k = 0; k < std::max<Index>(Y.cols(), 2); ++k) ds.classes.push_back(static_cast<int>(k));
    ds.encoding = Y.cols() > 1 ? TargetEncoding::one_hot : TargetEncoding::plus_minus_one;
    ds.validate();
    return ds;
}

py::dict metrics_to_dict(const MetricsRow& r) {
    py::dict d;
    d["percent"] = r.percent;
    d["space"] = r.space;
    d["cold_runtime"] = r.cold_runtime;
    d["warm_runtime_mean"] = r.warm_runtime_mean;
    d["warm_runtime_std"] = r.warm_runtime_std;
    d["rel_l2"] = r.rel_l2;
    d["forget_acc_unlearned"] = r.forget_acc_unlearned;
    d["forget_acc_retrained"] = r.forget_acc_retrained;
    d["baseline_rel_l2"] = r.baseline_rel_l2;
    return d;
}

}  // namespace

PYBIND11_MODULE(_kinf, m) {
    m.doc() = "Influence-based unlearning in parameter and kernel space";

    auto error = py::register_exception<Error>(m, "KinfError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", error.ptr());

    m.def(
        "make_blobs",
        [](int n_classes, Index per_class, Index d_in, double spread, std::uint64_t seed, const std::string& encoding) {
            const LabeledDataset ds = make_blobs(n_classes, per_class, d_in, spread, seed, parse_encoding(encoding));
            return py::make_tuple(ds.features, ds.targets, ds.labels);
        },
        py::arg("n_classes"), py::arg("per_class"), py::arg("d_in"), py::arg("spread") = 0.15, py::arg("seed") = 0,
        py::arg("encoding") = "one_hot", "Gaussian clusters in [0,1]^d_in; returns (X, Y, labels).");

    py::class_<Mlp>(m, "Mlp")
        .def(py::init([](const std::vector<Index>& widths, std::uint64_t seed, const std::string& activation) {
                 return Mlp(make_spec(widths, seed, activation));
             }),
             py::arg("widths"), py::arg("seed") = 0, py::arg("activation") = "relu")
        .def_property_readonly("param_count", &Mlp::param_count)
        .def("init_params", [](const Mlp& net) { return net.init_params().values; })
        .def("forward", &Mlp::forward, py::arg("theta"), py::arg("X"), "Outputs as a d_out x N array.")
        .def("stacked_jacobian", &Mlp::stacked_jacobian, py::arg("theta"), py::arg("X"));

    m.def(
        "empirical_ntk",
        [](const Mlp& net, const Vec& theta, const Mat& X1, const std::optional<Mat>& X2) {
            return (X2 ? empirical_ntk(net, theta, X1, *X2) : empirical_ntk(net, theta, X1)).expanded();
        },
        py::arg("model"), py::arg("theta"), py::arg("X1"), py::arg("X2") = std::nullopt,
        "Point-major (N1 d_out) x (N2 d_out) tangent kernel.");

    m.def(
        "analytic_ntk",
        [](const Mat& X1, const std::optional<Mat>& X2, int hidden_layers, double sigma_w2, double sigma_b2) {
            const AnalyticNtkSpec spec{hidden_layers, sigma_w2, sigma_b2, 1};
            return analytic_ntk_base(spec, X1, X2 ? *X2 : X1);
        },
        py::arg("X1"), py::arg("X2") = std::nullopt, py::arg("hidden_layers") = 3, py::arg("sigma_w2") = 2.0,
        py::arg("sigma_b2") = 0.01, "Infinite-width ReLU kernel for one output.");

    m.def(
        "unlearn_primal",
        [](const Mlp& net, const Vec& theta0, const Mat& X, const Mat& Y, Index forget_count, double lambda,
           const std::string& loss, double rel_tol, int max_iters) {
            const LabeledDataset ds = make_dataset(X, Y);
            const RiskConfig cfg = make_risk(lambda, loss);
            const Predictor lin = Predictor::linearized(net, theta0);
            SplitDataset split{ds, forget_count, {}};
            for (Index i = 0; i < ds.size(); ++i) split.permutation.push_back(i);
            const Vec theta_star = fit_linearized(lin, ds, cfg).values;
            CgOptions cg;
            cg.rel_tol = rel_tol;
            cg.max_iters = max_iters;
            const InfluenceReport r = influence_params_primal(lin, theta_star, split, cfg, cg);
            py::dict d;
            d["theta_star"] = theta_star;
            d["delta_theta"] = r.delta_theta;
            d["iters"] = r.iters;
            d["residual"] = r.residual;
            return d;
        },
        py::arg("model"), py::arg("theta0"), py::arg("X"), py::arg("Y"), py::arg("forget_count"),
        py::arg("lam") = 0.1, py::arg("loss") = "squared", py::arg("rel_tol") = 1e-10, py::arg("max_iters") = 1000,
        "Fits the linearized model exactly and returns the parameter change that removes the first "
        "forget_count rows.");

    m.def(
        "unlearn_dual",
        [](const Mat& K, const Mat& outputs, const Mat& targets, Index forget_count, double lambda,
           const std::string& loss, double rel_tol, int max_iters) {
            const Index d_out = outputs.rows();
            const KernelMatrix km = KernelMatrix::dense(K, d_out, KernelSource{});
            const DualSystem sys(km, outputs, targets, forget_count, make_risk(lambda, loss));
            CgOptions cg;
            cg.rel_tol = rel_tol;
            cg.max_iters = max_iters;
            const DualSolve s = sys.solve_reduced(cg);
            py::dict d;
            d["alpha_star"] = s.coefficients.alpha_star;
            d["delta_alpha"] = s.coefficients.delta_alpha;
            d["iters"] = s.iters;
            d["dense"] = s.dense;
            return d;
        },
        py::arg("K"), py::arg("outputs"), py::arg("targets"), py::arg("forget_count"), py::arg("lam") = 0.1,
        py::arg("loss") = "squared", py::arg("rel_tol") = 1e-10, py::arg("max_iters") = 1000,
        "Coefficient change in kernel space; outputs and targets are d_out x N.");

    m.def(
        "kgd_train",
        [](const Mat& K, const Mat& X, const Mat& Y, double lambda, double lr, int epochs, double tol) {
            const LabeledDataset ds = make_dataset(X, Y);
            const KernelMatrix km = KernelMatrix::kronecker(K, Y.cols(), KernelSource{KernelKind::analytic});
            const FunctionState st = kgd_train(km, ds, make_risk(lambda, "squared"), KgdOptions{lr, epochs, tol});
            py::dict d;
            d["f_train"] = st.f_train;
            d["epochs"] = st.epoch;
            d["stationarity"] = st.stationarity_residual;
            return d;
        },
        py::arg("K"), py::arg("X"), py::arg("Y"), py::arg("lam") = 0.1, py::arg("lr") = 0.5, py::arg("epochs") = 5000,
        py::arg("tol") = 0.0, "Functional gradient descent with squared loss on a single-output kernel.");

    m.def(
        "run_experiment",
        [](const std::string& config_text, const std::optional<std::filesystem::path>& cli) {
            ExperimentConfig cfg = ExperimentConfig::parse_text(config_text);
            if (!cli) cfg.cold = ColdMode::in_process;
            py::list rows;
            for (const auto& r : run_unlearning_experiment(cfg, cli)) rows.append(metrics_to_dict(r));
            return rows;
        },
        py::arg("config_text"), py::arg("cli") = std::nullopt,
        "Runs the removal experiment described by key = value text and returns one dict per cell.");

    m.def(
        "config_defaults", [] { return ExperimentConfig::parse_text("").to_text(); },
        "Default configuration as key = value text.");
}

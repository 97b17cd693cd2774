#include "kinf/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "kinf/errors.hpp"

namespace kinf {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_real(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("'" + s + "' is not a number");
    }
    if (used != s.size() || !std::isfinite(v)) throw ConfigError("'" + s + "' is not a finite number");
    return v;
}

template <typename T>
T to_int(const std::string& s) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("'" + s + "' is not an integer");
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("'" + s + "' is not a boolean");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += f(xs[i]);
    }
    return out;
}

Index expected_input_dim(const DataConfig& d) {
    switch (d.source) {
        case DataSource::mnist: return 784;
        case DataSource::cifar10: return 3072;
        case DataSource::blobs: break;
    }
    return d.input_dim;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

}  // namespace

SpaceSelection parse_space(const std::string& name) {
    if (name == "theta") return SpaceSelection::theta;
    if (name == "dual") return SpaceSelection::dual;
    if (name == "both") return SpaceSelection::both;
    throw ConfigError("unknown space '" + name + "' (expected theta, dual or both)");
}

std::string to_string(SpaceSelection s) {
    switch (s) {
        case SpaceSelection::theta: return "theta";
        case SpaceSelection::dual: return "dual";
        case SpaceSelection::both: break;
    }
    return "both";
}

std::vector<double> parse_real_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(to_real(item));
    return out;
}

void ExperimentConfig::validate() const {
    require(!name.empty() && name.find('/') == std::string::npos, "experiment.name must be a plain name");
    require(!data.classes.empty(), "data.classes is empty");
    require(std::set<int>(data.classes.begin(), data.classes.end()).size() == data.classes.size(),
            "data.classes has duplicates");
    require(data.per_class >= 1, "data.per_class must be positive");
    require(data.test_per_class >= 1, "data.test_per_class must be positive");
    require(data.input_dim >= 1, "data.input_dim must be positive");
    require(data.spread >= 0.0, "data.spread must be nonnegative");
    if (data.encoding == TargetEncoding::plus_minus_one) {
        require(data.classes.size() == 2, "plus_minus_one encoding needs exactly two classes");
    }
    model.validate();
    const Index d_out = data.encoding == TargetEncoding::one_hot ? static_cast<Index>(data.classes.size()) : 1;
    require(model.input_dim() == expected_input_dim(data),
            "model.widths starts with " + std::to_string(model.input_dim()) + " but the data has dimension " +
                std::to_string(expected_input_dim(data)));
    require(model.output_dim() == d_out, "model.widths ends with " + std::to_string(model.output_dim()) +
                                             " but the targets have dimension " + std::to_string(d_out));
    risk.validate();
    require(!(optimizer == OptimizerKind::exact && !linearized), "opt.kind = exact needs model.linearized = true");
    require(lr > 0.0, "opt.lr must be positive");
    require(beta >= 0.0 && beta < 1.0, "opt.beta must lie in [0,1)");
    require(stop.max_epochs >= 1, "stop.max_epochs must be positive");
    require(stop.grad_tol >= 0.0, "stop.grad_tol must be nonnegative");
    require(!percents.empty(), "unlearn.percents is empty");
    for (double p : percents) require(p > 0.0 && p < 100.0, "removal percent " + fmt(p) + " is outside (0,100)");
    if (scope.class_id) {
        require(std::find(data.classes.begin(), data.classes.end(), *scope.class_id) != data.classes.end(),
                "unlearn.scope names a class that is not in data.classes");
    }
    require(shards >= 0, "unlearn.shards must be nonnegative");
    require(!seeds.empty(), "seeds is empty");
    cg.validate();
    require(!lambdas.empty(), "sweep.lambdas is empty");
    for (double l : lambdas) require(l > 0.0, "sweep.lambdas entries must be positive");
    require(record_every >= 1, "sweep.record_every must be positive");
    require(ntk_depth >= 0, "ntk.depth must be nonnegative");
    require(kgd_lr > 0.0, "kgd.lr must be positive");
    require(kgd_epochs >= 1, "kgd.epochs must be positive");
    require(kgd_tol >= 0.0, "kgd.tol must be nonnegative");
    require(test_points >= 1, "ntk.test_points must be positive");
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream o;
    const auto src = data.source == DataSource::blobs ? "blobs" : data.source == DataSource::mnist ? "mnist" : "cifar10";
    const auto opt = optimizer == OptimizerKind::exact ? "exact" : optimizer == OptimizerKind::gd ? "gd" : "momentum";
    o << "experiment.name = " << name << "\n"
      << "data.source = " << src << "\n"
      << "data.classes = " << join(data.classes, [](int c) { return std::to_string(c); }) << "\n"
      << "data.per_class = " << data.per_class << "\n"
      << "data.test_per_class = " << data.test_per_class << "\n"
      << "data.input_dim = " << data.input_dim << "\n"
      << "data.spread = " << fmt(data.spread) << "\n"
      << "data.encoding = " << (data.encoding == TargetEncoding::one_hot ? "one_hot" : "plus_minus_one") << "\n"
      << "model.widths = " << join(model.widths, [](Index w) { return std::to_string(w); }) << "\n"
      << "model.activation = " << (model.activation == Activation::relu ? "relu" : "identity") << "\n"
      << "model.parameterization = " << (model.parameterization == Parameterization::ntk ? "ntk" : "standard")
      << "\n"
      << "model.sigma_w2 = " << fmt(model.sigma_w2) << "\n"
      << "model.sigma_b2 = " << fmt(model.sigma_b2) << "\n"
      << "model.linearized = " << (linearized ? "true" : "false") << "\n"
      << "risk.lambda = " << fmt(risk.lambda) << "\n"
      << "risk.center = " << (risk.center == Center::reference ? "reference" : "origin") << "\n"
      << "risk.loss = " << to_string(risk.loss) << "\n"
      << "opt.kind = " << opt << "\n"
      << "opt.lr = " << fmt(lr) << "\n"
      << "opt.beta = " << fmt(beta) << "\n"
      << "stop.max_epochs = " << stop.max_epochs << "\n"
      << "stop.grad_tol = " << fmt(stop.grad_tol) << "\n"
      << "seeds = " << join(seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n"
      << "unlearn.percents = " << join(percents, fmt) << "\n"
      << "unlearn.scope = " << (scope.class_id ? std::to_string(*scope.class_id) : std::string("all")) << "\n"
      << "unlearn.space = " << to_string(space) << "\n"
      << "unlearn.shards = " << shards << "\n"
      << "unlearn.cold = " << (cold == ColdMode::subprocess ? "subprocess" : "in_process") << "\n"
      << "cg.rel_tol = " << fmt(cg.rel_tol) << "\n"
      << "cg.max_iters = " << cg.max_iters << "\n"
      << "cg.preconditioner = " << (cg.preconditioner == Preconditioner::jacobi ? "jacobi" : "none") << "\n"
      << "sweep.lambdas = " << join(lambdas, fmt) << "\n"
      << "sweep.record_every = " << record_every << "\n"
      << "ntk.depth = " << ntk_depth << "\n"
      << "ntk.test_points = " << test_points << "\n"
      << "kgd.lr = " << fmt(kgd_lr) << "\n"
      << "kgd.epochs = " << kgd_epochs << "\n"
      << "kgd.tol = " << fmt(kgd_tol) << "\n"
      << "output.dir = " << out_dir.string() << "\n";
    return o.str();
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
    ExperimentConfig c;
    c.model.widths = {16, 64, 2};
    using Setter = std::function<void(const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"experiment.name", [&](const std::string& v) { c.name = v; }},
        {"data.source",
         [&](const std::string& v) {
             if (v == "blobs") c.data.source = DataSource::blobs;
             else if (v == "mnist") c.data.source = DataSource::mnist;
             else if (v == "cifar10") c.data.source = DataSource::cifar10;
             else throw ConfigError("unknown data.source '" + v + "'");
         }},
        {"data.classes",
         [&](const std::string& v) {
             c.data.classes.clear();
             for (const auto& s : split_list(v)) c.data.classes.push_back(to_int<int>(s));
         }},
        {"data.per_class", [&](const std::string& v) { c.data.per_class = to_int<Index>(v); }},
        {"data.test_per_class", [&](const std::string& v) { c.data.test_per_class = to_int<Index>(v); }},
        {"data.input_dim", [&](const std::string& v) { c.data.input_dim = to_int<Index>(v); }},
        {"data.spread", [&](const std::string& v) { c.data.spread = to_real(v); }},
        {"data.encoding",
         [&](const std::string& v) {
             if (v == "one_hot") c.data.encoding = TargetEncoding::one_hot;
             else if (v == "plus_minus_one") c.data.encoding = TargetEncoding::plus_minus_one;
             else throw ConfigError("unknown data.encoding '" + v + "'");
         }},
        {"model.widths",
         [&](const std::string& v) {
             c.model.widths.clear();
             for (const auto& s : split_list(v)) c.model.widths.push_back(to_int<Index>(s));
         }},
        {"model.activation",
         [&](const std::string& v) {
             if (v == "relu") c.model.activation = Activation::relu;
             else if (v == "identity") c.model.activation = Activation::identity;
             else throw ConfigError("unknown model.activation '" + v + "'");
         }},
        {"model.parameterization",
         [&](const std::string& v) {
             if (v == "ntk") c.model.parameterization = Parameterization::ntk;
             else if (v == "standard") c.model.parameterization = Parameterization::standard;
             else throw ConfigError("unknown model.parameterization '" + v + "'");
         }},
        {"model.sigma_w2", [&](const std::string& v) { c.model.sigma_w2 = to_real(v); }},
        {"model.sigma_b2", [&](const std::string& v) { c.model.sigma_b2 = to_real(v); }},
        {"model.linearized", [&](const std::string& v) { c.linearized = to_bool(v); }},
        {"risk.lambda", [&](const std::string& v) { c.risk.lambda = to_real(v); }},
        {"risk.center",
         [&](const std::string& v) {
             if (v == "reference") c.risk.center = Center::reference;
             else if (v == "origin") c.risk.center = Center::origin;
             else throw ConfigError("unknown risk.center '" + v + "'");
         }},
        {"risk.loss", [&](const std::string& v) { c.risk.loss = parse_loss(v); }},
        {"opt.kind",
         [&](const std::string& v) {
             if (v == "exact") c.optimizer = OptimizerKind::exact;
             else if (v == "gd") c.optimizer = OptimizerKind::gd;
             else if (v == "momentum") c.optimizer = OptimizerKind::momentum;
             else throw ConfigError("unknown opt.kind '" + v + "'");
         }},
        {"opt.lr", [&](const std::string& v) { c.lr = to_real(v); }},
        {"opt.beta", [&](const std::string& v) { c.beta = to_real(v); }},
        {"stop.max_epochs", [&](const std::string& v) { c.stop.max_epochs = to_int<int>(v); }},
        {"stop.grad_tol", [&](const std::string& v) { c.stop.grad_tol = to_real(v); }},
        {"seed", [&](const std::string& v) { c.seeds = {to_int<std::uint64_t>(v)}; }},
        {"seeds",
         [&](const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split_list(v)) c.seeds.push_back(to_int<std::uint64_t>(s));
         }},
        {"unlearn.percents", [&](const std::string& v) { c.percents = parse_real_list(v); }},
        {"unlearn.scope",
         [&](const std::string& v) {
             c.scope = v == "all" ? RemovalScope::all() : RemovalScope::single(to_int<int>(v));
         }},
        {"unlearn.space", [&](const std::string& v) { c.space = parse_space(v); }},
        {"unlearn.shards", [&](const std::string& v) { c.shards = to_int<int>(v); }},
        {"unlearn.cold",
         [&](const std::string& v) {
             if (v == "subprocess") c.cold = ColdMode::subprocess;
             else if (v == "in_process") c.cold = ColdMode::in_process;
             else throw ConfigError("unknown unlearn.cold '" + v + "'");
         }},
        {"cg.rel_tol", [&](const std::string& v) { c.cg.rel_tol = to_real(v); }},
        {"cg.max_iters", [&](const std::string& v) { c.cg.max_iters = to_int<int>(v); }},
        {"cg.preconditioner",
         [&](const std::string& v) {
             if (v == "none") c.cg.preconditioner = Preconditioner::none;
             else if (v == "jacobi") c.cg.preconditioner = Preconditioner::jacobi;
             else throw ConfigError("unknown cg.preconditioner '" + v + "'");
         }},
        {"sweep.lambdas", [&](const std::string& v) { c.lambdas = parse_real_list(v); }},
        {"sweep.record_every", [&](const std::string& v) { c.record_every = to_int<int>(v); }},
        {"ntk.depth", [&](const std::string& v) { c.ntk_depth = to_int<int>(v); }},
        {"ntk.test_points", [&](const std::string& v) { c.test_points = to_int<Index>(v); }},
        {"kgd.lr", [&](const std::string& v) { c.kgd_lr = to_real(v); }},
        {"kgd.epochs", [&](const std::string& v) { c.kgd_epochs = to_int<int>(v); }},
        {"kgd.tol", [&](const std::string& v) { c.kgd_tol = to_real(v); }},
        {"output.dir", [&](const std::string& v) { c.out_dir = v; }},
    };
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        try {
            it->second(value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
        } catch (const Error& e) {
            throw ConfigError("line " + std::to_string(lineno) + " (" + key + "): " + e.what());
        }
    }
    return c;
}

ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in);
}

}  // namespace kinf

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "permagg/aggregation.hpp"
#include "permagg/core.hpp"
#include "permagg/kernels.hpp"
#include "permagg/parallel.hpp"
#include "permagg/perm.hpp"
#include "permagg/rng.hpp"
#include "permagg/version.hpp"

namespace permagg {

// ---------------------------------------------------------------------------
// Deterministic number formatting (17 significant digits round-trips doubles)
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto res =
        std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
    return std::string(buf.data(), res.ptr);
}

// ---------------------------------------------------------------------------
// Methods under comparison
// ---------------------------------------------------------------------------

enum class Method { gcv, cv, erm, aggregate, aggregate_jackknife };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::gcv: return "gcv";
        case Method::cv: return "cv";
        case Method::erm: return "erm-on-grid";
        case Method::aggregate: return "aggregate";
        case Method::aggregate_jackknife: return "aggregate-jackknife";
    }
    return "?";
}

inline Method method_from_name(const std::string& name) {
    if (name == "gcv") return Method::gcv;
    if (name == "cv") return Method::cv;
    if (name == "erm-on-grid") return Method::erm;
    if (name == "aggregate") return Method::aggregate;
    if (name == "aggregate-jackknife") return Method::aggregate_jackknife;
    throw std::invalid_argument("unknown method: " + name +
                                " (expected gcv|cv|erm-on-grid|aggregate|aggregate-jackknife)");
}

// ---------------------------------------------------------------------------
// Bandwidth grid
// ---------------------------------------------------------------------------

/// Candidate bandwidth grid. The default "decay" mode maps a decay-exponent
/// range to bandwidths a * n^{-l/(2l+1)} with step 1/log n, so the grid adapts
/// to the sample size; "log" gives count log-spaced values in [h_min, h_max];
/// "explicit" uses the listed values as-is.
struct HGridSpec {
    std::string mode = "log";  // log | decay | explicit
    double l_min = 0.6;        // decay mode; must exceed 1/2
    double l_max = 5.0;
    double a = 1.0;
    double h_min = 2e-5;  // log mode
    double h_max = 1.0;
    int count = 51;
    std::vector<double> values;  // explicit mode

    std::vector<double> make(double n) const {
        if (mode == "explicit") {
            if (values.empty())
                throw std::invalid_argument("h_grid: explicit mode needs nonempty values");
            for (double h : values)
                if (!(h > 0.0)) throw std::invalid_argument("h_grid: bandwidths must be > 0");
            return values;
        }
        if (mode == "decay") {
            std::vector<double> grid;
            for (auto [l, h] : build_rkhs_grid(l_min, l_max, n, a)) grid.push_back(h);
            return grid;
        }
        if (mode != "log")
            throw std::invalid_argument("h_grid: mode must be decay|log|explicit, got " + mode);
        if (count < 1) throw std::invalid_argument("h_grid: count must be >= 1");
        if (!(h_min > 0.0 && h_max >= h_min))
            throw std::invalid_argument("h_grid: need 0 < h_min <= h_max");
        std::vector<double> grid(static_cast<std::size_t>(count));
        if (count == 1) {
            grid[0] = h_min;
            return grid;
        }
        double ratio = h_max / h_min;
        for (int k = 0; k < count; ++k)
            grid[static_cast<std::size_t>(k)] =
                h_min * std::pow(ratio, static_cast<double>(k) / (count - 1));
        grid.back() = h_max;
        return grid;
    }
};

// ---------------------------------------------------------------------------
// Experiment configuration (mirrored 1:1 by the JSON config file)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string target = "hardsine";  // hardsine | oscsine
    DesignSpec design{DesignKind::uniform_symmetric, 1, {}, {}};
    double rsnr = 2.0;
    std::vector<int> n_list = {20, 30, 50, 100};
    int reps = 200;
    std::vector<std::string> methods = {"gcv", "cv", "aggregate-jackknife"};
    std::vector<double> t_set = default_T_set();
    int jackknife_replicates = 20;
    double split_frac = 0.75;
    std::string t_score = "full";
    std::uint64_t master_seed = 1;
    std::string kernel = "cubic-spline";
    double kernel_width = 1.0;
    bool intercept = false;
    HGridSpec h_grid;
    std::string eval_mode = "auto";  // auto | grid | monte-carlo
    int eval_points = 10001;
    int eval_draws = 10000;
};

inline TargetFunction make_benchmark_target(const std::string& name, const DesignSpec& design) {
    auto [lo, hi] = support_box(design);
    if (name == "hardsine") {
        TargetFunction f = make_hardsine();
        f.lo = lo;
        f.hi = hi;
        return f;
    }
    if (name == "oscsine") {
        TargetFunction f = make_oscsine();
        f.lo = lo;
        f.hi = hi;
        return f;
    }
    throw std::invalid_argument("unknown target: " + name + " (expected hardsine|oscsine)");
}

inline KernelSpec kernel_from_config(const ExperimentConfig& cfg) {
    KernelSpec spec;
    spec.family = kernel_family_from_name(cfg.kernel);
    spec.d = cfg.design.d;
    spec.width = cfg.kernel_width;
    validate_kernel(spec);
    return spec;
}

inline EvalSpec resolve_eval_spec(const ExperimentConfig& cfg) {
    EvalSpec spec = default_eval_spec(cfg.design);
    if (cfg.eval_mode == "grid")
        spec.kind = EvalSpec::Kind::grid;
    else if (cfg.eval_mode == "monte-carlo")
        spec.kind = EvalSpec::Kind::monte_carlo;
    else if (cfg.eval_mode != "auto")
        throw std::invalid_argument("eval_mode must be auto|grid|monte-carlo, got " +
                                    cfg.eval_mode);
    spec.points = cfg.eval_points;
    spec.draws = cfg.eval_draws;
    return spec;
}

inline void validate_experiment_config(const ExperimentConfig& cfg) {
    validate_design(cfg.design);
    make_benchmark_target(cfg.target, cfg.design);
    if (!(cfg.rsnr > 0.0)) throw std::invalid_argument("rsnr must be > 0");
    if (cfg.n_list.empty()) throw std::invalid_argument("n_list must be nonempty");
    for (int n : cfg.n_list)
        if (n < 4) throw std::invalid_argument("n_list entries must be >= 4");
    if (cfg.reps < 1) throw std::invalid_argument("reps must be >= 1");
    if (cfg.methods.empty()) throw std::invalid_argument("methods must be nonempty");
    for (const std::string& m : cfg.methods) method_from_name(m);
    if (cfg.t_set.empty()) throw std::invalid_argument("t_set must be nonempty");
    for (double T : cfg.t_set)
        if (!(T > 0.0)) throw std::invalid_argument("t_set entries must be > 0");
    if (cfg.jackknife_replicates < 1)
        throw std::invalid_argument("jackknife_replicates must be >= 1");
    if (!(cfg.split_frac > 0.0 && cfg.split_frac < 1.0))
        throw std::invalid_argument("split_frac must lie in (0,1)");
    t_score_mode_from_name(cfg.t_score);
    kernel_from_config(cfg);
    for (int n : cfg.n_list) cfg.h_grid.make(n);
    resolve_eval_spec(cfg);
    if (cfg.eval_points < 2) throw std::invalid_argument("eval_points must be >= 2");
    if (cfg.eval_draws < 1) throw std::invalid_argument("eval_draws must be >= 1");
}

namespace detail {

inline std::string design_kind_name(DesignKind kind) {
    switch (kind) {
        case DesignKind::uniform_unit_cube: return "uniform-unit-cube";
        case DesignKind::uniform_symmetric: return "uniform-symmetric";
        case DesignKind::discrete_atoms: return "discrete-atoms";
    }
    return "?";
}

inline DesignKind design_kind_from_name(const std::string& name) {
    if (name == "uniform-unit-cube") return DesignKind::uniform_unit_cube;
    if (name == "uniform-symmetric") return DesignKind::uniform_symmetric;
    if (name == "discrete-atoms") return DesignKind::discrete_atoms;
    throw std::invalid_argument(
        "unknown design kind: " + name +
        " (expected uniform-unit-cube|uniform-symmetric|discrete-atoms)");
}

inline void require_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw std::invalid_argument("unknown key \"" + it.key() + "\" in " + where);
}

}  // namespace detail

inline nlohmann::json to_json(const DesignSpec& design) {
    nlohmann::json j;
    j["kind"] = detail::design_kind_name(design.kind);
    j["d"] = design.d;
    if (design.kind == DesignKind::discrete_atoms) {
        nlohmann::json atoms = nlohmann::json::array();
        for (const Point& a : design.atoms)
            atoms.push_back(std::vector<double>(a.data(), a.data() + a.size()));
        j["atoms"] = std::move(atoms);
        j["probs"] = design.probs;
    }
    return j;
}

inline DesignSpec design_from_json(const nlohmann::json& j) {
    detail::require_keys(j, {"kind", "d", "atoms", "probs"}, "design");
    DesignSpec design;
    if (j.contains("kind")) design.kind = detail::design_kind_from_name(j.at("kind"));
    if (j.contains("d")) design.d = j.at("d").get<int>();
    if (j.contains("atoms")) {
        for (const auto& row : j.at("atoms")) {
            std::vector<double> coords = row.get<std::vector<double>>();
            design.atoms.push_back(
                Eigen::Map<const Point>(coords.data(), static_cast<Eigen::Index>(coords.size())));
        }
    }
    if (j.contains("probs")) design.probs = j.at("probs").get<std::vector<double>>();
    validate_design(design);
    return design;
}

inline nlohmann::json to_json(const HGridSpec& grid) {
    nlohmann::json j;
    j["mode"] = grid.mode;
    if (grid.mode == "explicit") {
        j["values"] = grid.values;
        return j;
    }
    if (grid.mode == "decay") {
        j["l_min"] = grid.l_min;
        j["l_max"] = grid.l_max;
        j["a"] = grid.a;
        return j;
    }
    j["h_min"] = grid.h_min;
    j["h_max"] = grid.h_max;
    j["count"] = grid.count;
    return j;
}

inline HGridSpec h_grid_from_json(const nlohmann::json& j) {
    detail::require_keys(j, {"mode", "l_min", "l_max", "a", "h_min", "h_max", "count", "values"},
                         "h_grid");
    HGridSpec grid;
    if (j.contains("mode")) grid.mode = j.at("mode").get<std::string>();
    if (j.contains("values")) {
        grid.values = j.at("values").get<std::vector<double>>();
        if (!j.contains("mode")) grid.mode = "explicit";
    }
    if (j.contains("l_min")) grid.l_min = j.at("l_min").get<double>();
    if (j.contains("l_max")) grid.l_max = j.at("l_max").get<double>();
    if (j.contains("a")) grid.a = j.at("a").get<double>();
    if (j.contains("h_min")) grid.h_min = j.at("h_min").get<double>();
    if (j.contains("h_max")) grid.h_max = j.at("h_max").get<double>();
    if (j.contains("count")) grid.count = j.at("count").get<int>();
    return grid;
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["target"] = cfg.target;
    j["design"] = to_json(cfg.design);
    j["rsnr"] = cfg.rsnr;
    j["n_list"] = cfg.n_list;
    j["reps"] = cfg.reps;
    j["methods"] = cfg.methods;
    j["t_set"] = cfg.t_set;
    j["jackknife_replicates"] = cfg.jackknife_replicates;
    j["split_frac"] = cfg.split_frac;
    j["t_score"] = cfg.t_score;
    j["master_seed"] = cfg.master_seed;
    j["kernel"] = cfg.kernel;
    j["kernel_width"] = cfg.kernel_width;
    j["intercept"] = cfg.intercept;
    j["h_grid"] = to_json(cfg.h_grid);
    j["eval_mode"] = cfg.eval_mode;
    j["eval_points"] = cfg.eval_points;
    j["eval_draws"] = cfg.eval_draws;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    detail::require_keys(j,
                         {"target", "design", "rsnr", "n_list", "reps", "methods", "t_set",
                          "jackknife_replicates", "split_frac", "t_score", "master_seed",
                          "kernel", "kernel_width", "intercept", "h_grid", "eval_mode",
                          "eval_points", "eval_draws"},
                         "experiment config");
    ExperimentConfig cfg;
    if (j.contains("target")) cfg.target = j.at("target").get<std::string>();
    if (j.contains("design")) cfg.design = design_from_json(j.at("design"));
    if (j.contains("rsnr")) cfg.rsnr = j.at("rsnr").get<double>();
    if (j.contains("n_list")) cfg.n_list = j.at("n_list").get<std::vector<int>>();
    if (j.contains("reps")) cfg.reps = j.at("reps").get<int>();
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("t_set")) cfg.t_set = j.at("t_set").get<std::vector<double>>();
    if (j.contains("jackknife_replicates"))
        cfg.jackknife_replicates = j.at("jackknife_replicates").get<int>();
    if (j.contains("split_frac")) cfg.split_frac = j.at("split_frac").get<double>();
    if (j.contains("t_score")) cfg.t_score = j.at("t_score").get<std::string>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("kernel")) cfg.kernel = j.at("kernel").get<std::string>();
    if (j.contains("kernel_width")) cfg.kernel_width = j.at("kernel_width").get<double>();
    if (j.contains("intercept")) cfg.intercept = j.at("intercept").get<bool>();
    if (j.contains("h_grid")) cfg.h_grid = h_grid_from_json(j.at("h_grid"));
    if (j.contains("eval_mode")) cfg.eval_mode = j.at("eval_mode").get<std::string>();
    if (j.contains("eval_points")) cfg.eval_points = j.at("eval_points").get<int>();
    if (j.contains("eval_draws")) cfg.eval_draws = j.at("eval_draws").get<int>();
    validate_experiment_config(cfg);
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::invalid_argument("config file " + path + " is not valid JSON: " + e.what());
    }
    try {
        return experiment_config_from_json(j);
    } catch (const std::exception& e) {
        throw std::invalid_argument("config file " + path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Benchmark report
// ---------------------------------------------------------------------------

struct RepFailure {
    std::string method;
    int n = 0;
    int rep = 0;
    std::string message;
};

struct ReportCell {
    std::string method;
    int n = 0;
    std::vector<int> rep_ids;   // successful reps, ascending
    std::vector<double> risks;  // aligned with rep_ids
    double mise_mean = std::numeric_limits<double>::quiet_NaN();
    double mise_sd = std::numeric_limits<double>::quiet_NaN();
};

struct RiskReport {
    std::string version = version_string;
    double sigma = 0.0;
    ExperimentConfig config;
    std::vector<ReportCell> cells;  // method-major, n within method
    std::vector<RepFailure> failures;

    const ReportCell& cell(const std::string& method, int n) const {
        for (const ReportCell& c : cells)
            if (c.method == method && c.n == n) return c;
        throw std::out_of_range("no report cell for method " + method + ", n = " +
                                std::to_string(n));
    }
};

/// Per-replicate aggregation weights, recorded when requested (one row per
/// candidate per split).
struct WeightRecord {
    std::string method;
    int n = 0;
    int rep = 0;
    int replicate = 0;
    int candidate = 0;
    double h = 0.0;
    double learn_risk = 0.0;
    double weight = 0.0;
    double temperature = 0.0;
};

// ---------------------------------------------------------------------------
// Benchmark driver
// ---------------------------------------------------------------------------

namespace detail {

struct AffineBox {
    Point lo, hi;

    Point map(const Point& x) const {
        Point out(x.size());
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            double w = hi[k] - lo[k];
            out[k] = w > 0.0 ? (x[k] - lo[k]) / w : 0.0;
        }
        return out;
    }
};

/// One hat-matrix pass scoring both criteria; selection semantics match
/// select_h (NaN skip, ties to the smaller h).
struct HPair {
    double h_gcv = 0.0;
    double h_cv = 0.0;
};

inline HPair select_h_pair(const Eigen::MatrixXd& G, const Eigen::VectorXd& ys,
                           const std::vector<double>& h_grid, bool intercept) {
    const double n = static_cast<double>(ys.size());
    double best_gcv = 0.0, best_cv = 0.0;
    int idx_gcv = -1, idx_cv = -1;
    HPair out;
    for (std::size_t g = 0; g < h_grid.size(); ++g) {
        double h = h_grid[g];
        double mu = n * h * h;
        double s_gcv = std::numeric_limits<double>::quiet_NaN();
        double s_cv = std::numeric_limits<double>::quiet_NaN();
        try {
            Eigen::MatrixXd S = hat_matrix_given_gram(G, mu, intercept);
            try {
                s_gcv = gcv_from_smoother(S, ys);
            } catch (const std::runtime_error&) {
            }
            try {
                s_cv = loocv_from_smoother(S, ys);
            } catch (const std::runtime_error&) {
            }
        } catch (const std::runtime_error&) {
        }
        if (!std::isnan(s_gcv) &&
            (idx_gcv < 0 || s_gcv < best_gcv || (s_gcv == best_gcv && h < out.h_gcv))) {
            idx_gcv = static_cast<int>(g);
            best_gcv = s_gcv;
            out.h_gcv = h;
        }
        if (!std::isnan(s_cv) &&
            (idx_cv < 0 || s_cv < best_cv || (s_cv == best_cv && h < out.h_cv))) {
            idx_cv = static_cast<int>(g);
            best_cv = s_cv;
            out.h_cv = h;
        }
    }
    if (idx_gcv < 0 || idx_cv < 0)
        throw std::runtime_error("select_h: selection failed; every grid point degenerated");
    return out;
}

/// Dual coefficients of a convex combination of models scattered onto the
/// full-sample index set, so one kernel pass evaluates any method.
struct ComposedModel {
    Eigen::VectorXd alpha;  // full-sample dual coefficients
    double intercept = 0.0;
};

inline void scatter_model(const KrrModel& model, const std::vector<int>& global_idx, double weight,
                          ComposedModel& out) {
    for (Eigen::Index i = 0; i < model.dual_coeffs.size(); ++i)
        out.alpha[global_idx[static_cast<std::size_t>(i)]] += weight * model.dual_coeffs[i];
    out.intercept += weight * model.intercept_value;
}

inline void scatter_aggregate(const AggregateModel& model, double weight, ComposedModel& out) {
    for (std::size_t c = 0; c < model.candidates.size(); ++c)
        scatter_model(model.candidates[c], model.plan.train_idx,
                      weight * model.weights.weights[static_cast<Eigen::Index>(c)], out);
}

}  // namespace detail

/// Paired comparison of bandwidth-selection methods by Monte Carlo MISE. Every
/// method sees the same rep-r dataset; design points are affinely mapped to
/// the unit cube before any kernel evaluation. Results are independent of the
/// worker count. When weight_log is given, the aggregation weights of every
/// split are appended to it (in deterministic order).
inline RiskReport run_mise_benchmark(const ExperimentConfig& cfg,
                                     std::vector<WeightRecord>* weight_log = nullptr) {
    validate_experiment_config(cfg);
    TargetFunction target = make_benchmark_target(cfg.target, cfg.design);
    KernelSpec kernel = kernel_from_config(cfg);
    double sigma = calibrate_sigma(target, cfg.design, cfg.rsnr);
    TScoreMode t_score = t_score_mode_from_name(cfg.t_score);
    std::vector<Method> methods;
    for (const std::string& name : cfg.methods) methods.push_back(method_from_name(name));

    auto [box_lo, box_hi] = support_box(cfg.design);
    detail::AffineBox box{box_lo, box_hi};
    EvalNodes nodes = make_eval_nodes(cfg.design, resolve_eval_spec(cfg));
    const int n_eval = static_cast<int>(nodes.points.size());
    std::vector<Point> eval_mapped;
    eval_mapped.reserve(nodes.points.size());
    Eigen::VectorXd f0(n_eval);
    for (int k = 0; k < n_eval; ++k) {
        eval_mapped.push_back(box.map(nodes.points[static_cast<std::size_t>(k)]));
        f0[k] = eval_target(target, nodes.points[static_cast<std::size_t>(k)]);
    }

    const int n_methods = static_cast<int>(methods.size());
    bool needs_hat = false;
    for (Method m : methods) needs_hat = needs_hat || m == Method::gcv || m == Method::cv;

    struct RepResult {
        std::vector<double> risks;        // NaN on failure
        std::vector<std::string> errors;  // empty on success
        std::vector<WeightRecord> weights;
    };

    RiskReport report;
    report.sigma = sigma;
    report.config = cfg;

    std::vector<std::vector<RepResult>> outcomes;  // [n index][rep]
    outcomes.reserve(cfg.n_list.size());

    for (std::size_t ni = 0; ni < cfg.n_list.size(); ++ni) {
        const int n = cfg.n_list[ni];
        std::vector<double> h_values = cfg.h_grid.make(n);
        std::vector<PermConfig> candidates;
        candidates.reserve(h_values.size());
        for (double h : h_values)
            candidates.push_back(PermConfig{kernel, h, 2.0, cfg.intercept, {}});
        const std::uint64_t n_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(n));
        std::vector<RepResult> slots(static_cast<std::size_t>(cfg.reps));
        parallel_for(cfg.reps, [&](int rep) {
            RepResult& slot = slots[static_cast<std::size_t>(rep)];
            slot.risks.assign(static_cast<std::size_t>(n_methods),
                              std::numeric_limits<double>::quiet_NaN());
            slot.errors.assign(static_cast<std::size_t>(n_methods), "");
            const std::uint64_t rep_seed = derive_seed(n_seed, static_cast<std::uint64_t>(rep));
            Dataset data = simulate_dataset(target, cfg.design, NoiseModel{sigma, 1.0}, n,
                                            derive_seed(rep_seed, 1));
            Dataset mapped;
            mapped.ys = data.ys;
            mapped.xs.reserve(data.xs.size());
            for (const Point& x : data.xs) mapped.xs.push_back(box.map(x));

            Eigen::MatrixXd K_eval = cross_gram(kernel, mapped.xs, eval_mapped);
            auto mise_of = [&](const detail::ComposedModel& model) {
                Eigen::VectorXd preds = K_eval.transpose() * model.alpha;
                preds.array() += model.intercept;
                Eigen::VectorXd diff = preds - f0;
                return nodes.weights.dot(diff.cwiseAbs2());
            };

            Eigen::MatrixXd G_full;
            detail::HPair pair;
            if (needs_hat) {
                G_full = gram(kernel, mapped.xs);
                pair = detail::select_h_pair(G_full, mapped.ys, h_values, cfg.intercept);
            }

            auto log_weights = [&](Method m, const AggregateModel& agg, int replicate) {
                if (!weight_log) return;
                for (std::size_t c = 0; c < agg.candidates.size(); ++c)
                    slot.weights.push_back(WeightRecord{
                        method_name(m), n, rep, replicate, static_cast<int>(c),
                        agg.candidates[c].config.h,
                        agg.weights.source_risks[static_cast<Eigen::Index>(c)],
                        agg.weights.weights[static_cast<Eigen::Index>(c)],
                        agg.weights.temperature});
            };

            for (int mi = 0; mi < n_methods; ++mi) {
                try {
                    detail::ComposedModel composed;
                    composed.alpha = Eigen::VectorXd::Zero(n);
                    switch (methods[static_cast<std::size_t>(mi)]) {
                        case Method::gcv:
                        case Method::cv: {
                            double h = methods[static_cast<std::size_t>(mi)] == Method::gcv
                                           ? pair.h_gcv
                                           : pair.h_cv;
                            KrrModel model = fit_krr_given_gram(
                                mapped.xs, G_full, mapped.ys,
                                PermConfig{kernel, h, 2.0, cfg.intercept, {}});
                            composed.alpha = model.dual_coeffs;
                            composed.intercept = model.intercept_value;
                            break;
                        }
                        case Method::erm: {
                            AggregateModel agg =
                                fit_aggregate(mapped, candidates, cfg.t_set,
                                              derive_seed(rep_seed, 4), cfg.split_frac, t_score);
                            int pick = erm_select(agg.weights.source_risks);
                            detail::scatter_model(
                                agg.candidates[static_cast<std::size_t>(pick)],
                                agg.plan.train_idx, 1.0, composed);
                            break;
                        }
                        case Method::aggregate: {
                            AggregateModel agg =
                                fit_aggregate(mapped, candidates, cfg.t_set,
                                              derive_seed(rep_seed, 2), cfg.split_frac, t_score);
                            detail::scatter_aggregate(agg, 1.0, composed);
                            log_weights(Method::aggregate, agg, 0);
                            break;
                        }
                        case Method::aggregate_jackknife: {
                            const int J = cfg.jackknife_replicates;
                            const std::uint64_t jack_seed = derive_seed(rep_seed, 3);
                            for (int j = 0; j < J; ++j) {
                                AggregateModel agg = fit_aggregate(
                                    mapped, candidates, cfg.t_set,
                                    derive_seed(jack_seed, static_cast<std::uint64_t>(j)),
                                    cfg.split_frac, t_score);
                                detail::scatter_aggregate(agg, 1.0 / J, composed);
                                log_weights(Method::aggregate_jackknife, agg, j);
                            }
                            break;
                        }
                    }
                    slot.risks[static_cast<std::size_t>(mi)] = mise_of(composed);
                } catch (const std::exception& e) {
                    slot.errors[static_cast<std::size_t>(mi)] = e.what();
                }
            }
        });
        outcomes.push_back(std::move(slots));
    }

    // assemble method-major cells in deterministic order
    for (int mi = 0; mi < n_methods; ++mi) {
        for (std::size_t ni = 0; ni < cfg.n_list.size(); ++ni) {
            ReportCell cell;
            cell.method = cfg.methods[static_cast<std::size_t>(mi)];
            cell.n = cfg.n_list[ni];
            for (int rep = 0; rep < cfg.reps; ++rep) {
                const RepResult& slot = outcomes[ni][static_cast<std::size_t>(rep)];
                if (slot.errors[static_cast<std::size_t>(mi)].empty()) {
                    cell.rep_ids.push_back(rep);
                    cell.risks.push_back(slot.risks[static_cast<std::size_t>(mi)]);
                } else {
                    report.failures.push_back(RepFailure{cell.method, cell.n, rep,
                                                         slot.errors[static_cast<std::size_t>(mi)]});
                }
            }
            const std::size_t k = cell.risks.size();
            if (k > 0) {
                double mean = 0.0;
                for (double r : cell.risks) mean += r;
                mean /= static_cast<double>(k);
                double ss = 0.0;
                for (double r : cell.risks) ss += (r - mean) * (r - mean);
                cell.mise_mean = mean;
                cell.mise_sd = k > 1 ? std::sqrt(ss / static_cast<double>(k - 1)) : 0.0;
            }
            report.cells.push_back(std::move(cell));
        }
    }
    if (weight_log)
        for (const auto& slots : outcomes)
            for (const RepResult& slot : slots)
                weight_log->insert(weight_log->end(), slot.weights.begin(), slot.weights.end());
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RiskReport& report) {
    nlohmann::json j;
    j["version"] = report.version;
    j["sigma"] = report.sigma;
    j["config"] = to_json(report.config);
    nlohmann::json cells = nlohmann::json::array();
    for (const ReportCell& cell : report.cells) {
        nlohmann::json c;
        c["method"] = cell.method;
        c["n"] = cell.n;
        c["rep_ids"] = cell.rep_ids;
        c["risks"] = cell.risks;
        if (std::isnan(cell.mise_mean)) {
            c["mise_mean"] = nullptr;
            c["mise_sd"] = nullptr;
        } else {
            c["mise_mean"] = cell.mise_mean;
            c["mise_sd"] = cell.mise_sd;
        }
        cells.push_back(std::move(c));
    }
    j["cells"] = std::move(cells);
    nlohmann::json failures = nlohmann::json::array();
    for (const RepFailure& f : report.failures)
        failures.push_back(nlohmann::json{
            {"method", f.method}, {"n", f.n}, {"rep", f.rep}, {"message", f.message}});
    j["failures"] = std::move(failures);
    return j;
}

inline RiskReport report_from_json(const nlohmann::json& j) {
    RiskReport report;
    report.version = j.at("version").get<std::string>();
    report.sigma = j.at("sigma").get<double>();
    report.config = experiment_config_from_json(j.at("config"));
    for (const auto& c : j.at("cells")) {
        ReportCell cell;
        cell.method = c.at("method").get<std::string>();
        cell.n = c.at("n").get<int>();
        cell.rep_ids = c.at("rep_ids").get<std::vector<int>>();
        cell.risks = c.at("risks").get<std::vector<double>>();
        if (!c.at("mise_mean").is_null()) {
            cell.mise_mean = c.at("mise_mean").get<double>();
            cell.mise_sd = c.at("mise_sd").get<double>();
        }
        report.cells.push_back(std::move(cell));
    }
    for (const auto& f : j.at("failures")) {
        report.failures.push_back(RepFailure{f.at("method").get<std::string>(),
                                             f.at("n").get<int>(), f.at("rep").get<int>(),
                                             f.at("message").get<std::string>()});
    }
    return report;
}

inline void write_report(const RiskReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "risks.csv");
        if (!out) throw std::runtime_error("cannot write " + (dir / "risks.csv").string());
        out << "method,n,rep,risk\n";
        for (const ReportCell& cell : report.cells)
            for (std::size_t i = 0; i < cell.rep_ids.size(); ++i)
                out << cell.method << ',' << cell.n << ',' << cell.rep_ids[i] << ','
                    << format_double(cell.risks[i]) << '\n';
    }
    {
        std::ofstream out(dir / "risks_summary.csv");
        if (!out)
            throw std::runtime_error("cannot write " + (dir / "risks_summary.csv").string());
        out << "method,n,mise_mean,mise_sd\n";
        for (const ReportCell& cell : report.cells)
            out << cell.method << ',' << cell.n << ',' << format_double(cell.mise_mean) << ','
                << format_double(cell.mise_sd) << '\n';
    }
    {
        std::ofstream out(dir / "report.json");
        if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
        out << to_json(report).dump(2) << '\n';
    }
}

inline RiskReport read_report(const std::filesystem::path& dir) {
    std::ifstream in(dir / "report.json");
    if (!in) throw std::runtime_error("cannot open " + (dir / "report.json").string());
    nlohmann::json j;
    in >> j;
    return report_from_json(j);
}

/// Field-by-field equality with doubles compared by value (NaN == NaN here),
/// used to check that serialization round-trips.
inline bool reports_equal(const RiskReport& a, const RiskReport& b) {
    auto deq = [](double x, double y) { return format_double(x) == format_double(y); };
    if (a.version != b.version || !deq(a.sigma, b.sigma)) return false;
    if (to_json(a.config) != to_json(b.config)) return false;
    if (a.cells.size() != b.cells.size() || a.failures.size() != b.failures.size()) return false;
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        const ReportCell& x = a.cells[i];
        const ReportCell& y = b.cells[i];
        if (x.method != y.method || x.n != y.n || x.rep_ids != y.rep_ids) return false;
        if (x.risks.size() != y.risks.size()) return false;
        for (std::size_t r = 0; r < x.risks.size(); ++r)
            if (!deq(x.risks[r], y.risks[r])) return false;
        if (!deq(x.mise_mean, y.mise_mean) || !deq(x.mise_sd, y.mise_sd)) return false;
    }
    for (std::size_t i = 0; i < a.failures.size(); ++i) {
        const RepFailure& x = a.failures[i];
        const RepFailure& y = b.failures[i];
        if (x.method != y.method || x.n != y.n || x.rep != y.rep || x.message != y.message)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Plot-ready flat files (series,x,y; one file per panel)
// ---------------------------------------------------------------------------

inline void emit_plot_data(const RiskReport& report, const std::filesystem::path& dir,
                           const std::string& prefix = "mise") {
    std::filesystem::create_directories(dir);
    auto write_panel = [&](const std::string& suffix, auto value) {
        std::filesystem::path path = dir / (prefix + "_" + suffix + ".csv");
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << "series,x,y\n";
        for (const ReportCell& cell : report.cells)
            out << cell.method << ',' << cell.n << ',' << format_double(value(cell)) << '\n';
    };
    write_panel("mean", [](const ReportCell& c) { return c.mise_mean; });
    write_panel("sd", [](const ReportCell& c) { return c.mise_sd; });
}

// ---------------------------------------------------------------------------
// Selector-gap table
// ---------------------------------------------------------------------------

struct ExcessRow {
    int M = 0;
    int n = 0;
    double excess = 0.0;  // Monte Carlo mean excess of the selector
    double bound = 0.0;   // sqrt(log M / n)
    double ratio = 0.0;   // excess / bound
};

inline void write_excess_table(const std::filesystem::path& path,
                               const std::vector<ExcessRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "M,n,excess,bound,ratio\n";
    for (const ExcessRow& row : rows)
        out << row.M << ',' << row.n << ',' << format_double(row.excess) << ','
            << format_double(row.bound) << ',' << format_double(row.ratio) << '\n';
}

inline void emit_excess_plot(const std::filesystem::path& path,
                             const std::vector<ExcessRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "series,x,y\n";
    for (const ExcessRow& row : rows)
        out << 'M' << row.M << ',' << row.n << ',' << format_double(row.ratio) << '\n';
}

}  // namespace permagg

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "permagg/rng.hpp"

namespace permagg {

using Point = Eigen::VectorXd;
using Predictor = std::function<double(const Point&)>;

/// Seed of the internal Monte Carlo used by calibrate_sigma. Fixed so the
/// noise level attached to a (target, design, rsnr) triple never varies.
inline constexpr std::uint64_t sigma_calibration_seed = 0x5ca1ab1e0ddba11ULL;

/// Seed of the default Monte Carlo risk evaluation (kept separate from every
/// training stream so risk estimates never interact with data simulation).
inline constexpr std::uint64_t default_eval_seed = 0xe7a15eedULL;

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

enum class TargetKind { hardsine, oscsine, constant, custom };

/// Regression function f0 together with its declared domain box.
struct TargetFunction {
    TargetKind kind = TargetKind::constant;
    double constant_value = 0.0;
    std::function<double(const Point&)> callable;  // used by TargetKind::custom
    Point lo;  // domain box, coordinatewise
    Point hi;
};

inline TargetFunction make_hardsine() {
    TargetFunction f;
    f.kind = TargetKind::hardsine;
    f.lo = Point::Constant(1, -1.0);
    f.hi = Point::Constant(1, 1.0);
    return f;
}

inline TargetFunction make_oscsine() {
    TargetFunction f;
    f.kind = TargetKind::oscsine;
    f.lo = Point::Constant(1, -1.0);
    f.hi = Point::Constant(1, 1.0);
    return f;
}

inline TargetFunction make_constant(double c, const Point& lo, const Point& hi) {
    TargetFunction f;
    f.kind = TargetKind::constant;
    f.constant_value = c;
    f.lo = lo;
    f.hi = hi;
    return f;
}

inline TargetFunction make_custom(std::function<double(const Point&)> fn, const Point& lo,
                                  const Point& hi) {
    TargetFunction f;
    f.kind = TargetKind::custom;
    f.callable = std::move(fn);
    f.lo = lo;
    f.hi = hi;
    return f;
}

inline bool in_domain(const TargetFunction& f, const Point& x, double tol = 1e-12) {
    if (f.lo.size() == 0) return true;  // unconstrained custom target
    if (x.size() != f.lo.size()) return false;
    for (Eigen::Index k = 0; k < x.size(); ++k)
        if (x[k] < f.lo[k] - tol || x[k] > f.hi[k] + tol) return false;
    return true;
}

inline double eval_target(const TargetFunction& f, const Point& x) {
    if (!in_domain(f, x))
        throw std::domain_error("eval_target: point outside the declared target domain");
    switch (f.kind) {
        case TargetKind::hardsine: {
            double t = x[0];
            return 2.0 * std::sin(1.0 + t) * std::sin(2.0 * std::numbers::pi * t * t + 1.0);
        }
        case TargetKind::oscsine: {
            double t = x[0];
            return (t + 1.0) * std::sin(4.0 * std::numbers::pi * t * t);
        }
        case TargetKind::constant:
            return f.constant_value;
        case TargetKind::custom:
            return f.callable(x);
    }
    throw std::logic_error("eval_target: unknown target kind");
}

/// Convenience overload for one-dimensional targets.
inline double eval_target(const TargetFunction& f, double x) {
    return eval_target(f, Point::Constant(1, x));
}

// ---------------------------------------------------------------------------
// Designs and noise
// ---------------------------------------------------------------------------

enum class DesignKind { uniform_unit_cube, uniform_symmetric, discrete_atoms };

/// Law of the design points X. Compactly supported by construction.
struct DesignSpec {
    DesignKind kind = DesignKind::uniform_unit_cube;
    int d = 1;
    std::vector<Point> atoms;   // discrete_atoms only
    std::vector<double> probs;  // discrete_atoms only
};

inline void validate_design(const DesignSpec& design) {
    if (design.d < 1) throw std::invalid_argument("design: dimension must be >= 1");
    if (design.kind != DesignKind::discrete_atoms) return;
    if (design.atoms.empty() || design.atoms.size() != design.probs.size())
        throw std::invalid_argument("design: atoms and probabilities must be nonempty and paired");
    double total = 0.0;
    for (std::size_t k = 0; k < design.atoms.size(); ++k) {
        if (design.atoms[k].size() != design.d)
            throw std::invalid_argument("design: atom dimension mismatch");
        if (!design.atoms[k].allFinite())
            throw std::invalid_argument("design: atoms must be finite");
        if (!(design.probs[k] >= 0.0))
            throw std::invalid_argument("design: probabilities must be nonnegative");
        total += design.probs[k];
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("design: probabilities must sum to 1 within 1e-12");
}

/// Coordinatewise support box (lo, hi) of the design law.
inline std::pair<Point, Point> support_box(const DesignSpec& design) {
    validate_design(design);
    switch (design.kind) {
        case DesignKind::uniform_unit_cube:
            return {Point::Zero(design.d), Point::Ones(design.d)};
        case DesignKind::uniform_symmetric:
            return {Point::Constant(design.d, -1.0), Point::Ones(design.d)};
        case DesignKind::discrete_atoms: {
            Point lo = design.atoms.front();
            Point hi = design.atoms.front();
            for (const Point& a : design.atoms) {
                lo = lo.cwiseMin(a);
                hi = hi.cwiseMax(a);
            }
            return {lo, hi};
        }
    }
    throw std::logic_error("support_box: unknown design kind");
}

inline Point sample_point(const DesignSpec& design, std::mt19937_64& rng) {
    switch (design.kind) {
        case DesignKind::uniform_unit_cube: {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            Point x(design.d);
            for (int k = 0; k < design.d; ++k) x[k] = u(rng);
            return x;
        }
        case DesignKind::uniform_symmetric: {
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            Point x(design.d);
            for (int k = 0; k < design.d; ++k) x[k] = u(rng);
            return x;
        }
        case DesignKind::discrete_atoms: {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            double r = u(rng);
            double acc = 0.0;
            for (std::size_t k = 0; k < design.atoms.size(); ++k) {
                acc += design.probs[k];
                if (r <= acc) return design.atoms[k];
            }
            return design.atoms.back();  // guard against rounding of the cdf
        }
    }
    throw std::logic_error("sample_point: unknown design kind");
}

/// Additive noise model: Y = f0(X) + sigma * eps, eps standard Gaussian.
/// subgaussian_proxy is the b constant of the tail condition (1 for Gaussian).
struct NoiseModel {
    double sigma = 0.0;
    double subgaussian_proxy = 1.0;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<Point> xs;
    Eigen::VectorXd ys;

    int n() const { return static_cast<int>(xs.size()); }
    int d() const { return xs.empty() ? 0 : static_cast<int>(xs.front().size()); }
};

inline void validate_dataset(const Dataset& data) {
    if (data.xs.empty() || static_cast<Eigen::Index>(data.xs.size()) != data.ys.size())
        throw std::invalid_argument("dataset: xs and ys must be nonempty and the same length");
    for (const Point& x : data.xs)
        if (!x.allFinite()) throw std::invalid_argument("dataset: design points must be finite");
    if (!data.ys.allFinite())
        throw std::invalid_argument("dataset: responses must be finite");
}

inline Dataset subset(const Dataset& data, const std::vector<int>& idx) {
    Dataset out;
    out.xs.reserve(idx.size());
    out.ys.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out.xs.push_back(data.xs.at(static_cast<std::size_t>(idx[k])));
        out.ys[static_cast<Eigen::Index>(k)] = data.ys[idx[k]];
    }
    return out;
}

inline Dataset simulate_dataset(const TargetFunction& f, const DesignSpec& design,
                                const NoiseModel& noise, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("simulate_dataset: n must be >= 1");
    if (noise.sigma < 0.0) throw std::invalid_argument("simulate_dataset: sigma must be >= 0");
    validate_design(design);
    auto rng = make_rng(seed);
    Dataset data;
    data.xs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) data.xs.push_back(sample_point(design, rng));
    data.ys.resize(n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        double y = eval_target(f, data.xs[static_cast<std::size_t>(i)]);
        if (noise.sigma > 0.0) y += noise.sigma * gauss(rng);
        data.ys[i] = y;
    }
    return data;
}

// ---------------------------------------------------------------------------
// Noise calibration
// ---------------------------------------------------------------------------

/// sigma = sd(f0(X)) / rsnr, with the sd taken under the design law: exact for
/// discrete designs, a fixed-seed 100 000-draw Monte Carlo otherwise.
inline double calibrate_sigma(const TargetFunction& f, const DesignSpec& design, double rsnr) {
    if (!(rsnr > 0.0)) throw std::invalid_argument("calibrate_sigma: rsnr must be > 0");
    validate_design(design);
    double mean = 0.0, second = 0.0;
    if (design.kind == DesignKind::discrete_atoms) {
        for (std::size_t k = 0; k < design.atoms.size(); ++k) {
            double v = eval_target(f, design.atoms[k]);
            mean += design.probs[k] * v;
            second += design.probs[k] * v * v;
        }
    } else {
        constexpr int draws = 100000;
        auto rng = make_rng(sigma_calibration_seed);
        for (int i = 0; i < draws; ++i) {
            double v = eval_target(f, sample_point(design, rng));
            mean += v;
            second += v * v;
        }
        mean /= draws;
        second /= draws;
    }
    double var = second - mean * mean;
    double sd = var > 0.0 ? std::sqrt(var) : 0.0;
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean)))
        throw std::invalid_argument(
            "calibrate_sigma: target has (numerically) zero variance under the design; "
            "rsnr calibration is undefined for a constant signal");
    return sd / rsnr;
}

// ---------------------------------------------------------------------------
// Risk evaluation
// ---------------------------------------------------------------------------

/// How to evaluate the L2(P_X) risk: a 1-d trapezoid grid quadrature or a
/// fixed-seed Monte Carlo. Discrete designs are always summed exactly.
struct EvalSpec {
    enum class Kind { grid, monte_carlo };
    Kind kind = Kind::grid;
    int points = 10001;  // grid nodes
    int draws = 10000;   // Monte Carlo draws
    std::uint64_t seed = default_eval_seed;
};

inline EvalSpec default_eval_spec(const DesignSpec& design) {
    EvalSpec spec;
    if (design.kind != DesignKind::discrete_atoms && design.d == 1) {
        spec.kind = EvalSpec::Kind::grid;
        spec.points = 10001;
    } else {
        spec.kind = EvalSpec::Kind::monte_carlo;
        spec.draws = 10000;
        spec.seed = default_eval_seed;
    }
    return spec;
}

/// Evaluation nodes and probability weights realizing an EvalSpec; the
/// weights sum to 1 so a weighted mean of squared errors is the risk.
struct EvalNodes {
    std::vector<Point> points;
    Eigen::VectorXd weights;
};

inline EvalNodes make_eval_nodes(const DesignSpec& design, const EvalSpec& spec) {
    validate_design(design);
    EvalNodes nodes;
    if (design.kind == DesignKind::discrete_atoms) {
        nodes.points = design.atoms;
        nodes.weights =
            Eigen::Map<const Eigen::VectorXd>(design.probs.data(),
                                              static_cast<Eigen::Index>(design.probs.size()));
        return nodes;
    }
    if (spec.kind == EvalSpec::Kind::grid) {
        if (design.d != 1)
            throw std::invalid_argument("eval: grid quadrature is 1-d only; use Monte Carlo");
        int N = spec.points;
        if (N < 2) throw std::invalid_argument("eval: grid needs at least 2 points");
        auto [lo, hi] = support_box(design);
        nodes.points.reserve(static_cast<std::size_t>(N));
        nodes.weights.resize(N);
        for (int i = 0; i < N; ++i) {
            double t = lo[0] + (hi[0] - lo[0]) * static_cast<double>(i) / (N - 1);
            nodes.points.push_back(Point::Constant(1, t));
            // trapezoid rule normalized by the uniform design density
            nodes.weights[i] = (i == 0 || i == N - 1 ? 0.5 : 1.0) / (N - 1);
        }
        return nodes;
    }
    int N = spec.draws;
    if (N < 1) throw std::invalid_argument("eval: Monte Carlo needs at least 1 draw");
    auto rng = make_rng(spec.seed);
    nodes.points.reserve(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) nodes.points.push_back(sample_point(design, rng));
    nodes.weights = Eigen::VectorXd::Constant(N, 1.0 / N);
    return nodes;
}

/// Approximates ||predict - f0||^2 in L2(P_X) (exact sum for discrete designs).
inline double l2_risk(const Predictor& predict, const TargetFunction& f, const DesignSpec& design,
                      const EvalSpec& spec) {
    EvalNodes nodes = make_eval_nodes(design, spec);
    double acc = 0.0;
    for (std::size_t i = 0; i < nodes.points.size(); ++i) {
        double g = predict(nodes.points[i]) - eval_target(f, nodes.points[i]);
        acc += nodes.weights[static_cast<Eigen::Index>(i)] * g * g;
    }
    return acc;
}

inline double l2_risk(const Predictor& predict, const TargetFunction& f,
                      const DesignSpec& design) {
    return l2_risk(predict, f, design, default_eval_spec(design));
}

/// (1/n) sum (Y_i - predict(X_i))^2.
inline double empirical_risk(const Predictor& predict, const Dataset& data) {
    validate_dataset(data);
    double acc = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        double r = data.ys[i] - predict(data.xs[static_cast<std::size_t>(i)]);
        acc += r * r;
    }
    return acc / data.n();
}

}  // namespace permagg

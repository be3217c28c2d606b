#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "permagg/core.hpp"
#include "permagg/kernels.hpp"
#include "permagg/perm.hpp"
#include "permagg/rng.hpp"

namespace permagg {

// ---------------------------------------------------------------------------
// Exponential weights
// ---------------------------------------------------------------------------

/// Simplex weights theta_i proportional to exp(-n_learn * risks[i] / T),
/// together with the inputs that produced them.
struct WeightVector {
    Eigen::VectorXd weights;
    double temperature = 1.0;
    Eigen::VectorXd source_risks;
    int n_learn = 1;

    int size() const { return static_cast<int>(weights.size()); }
};

inline WeightVector exp_weights(const Eigen::VectorXd& risks, int n_learn, double T) {
    if (risks.size() < 1) throw std::invalid_argument("exp_weights: empty risk vector");
    if (!risks.allFinite()) throw std::invalid_argument("exp_weights: risks must be finite");
    if (n_learn < 1) throw std::invalid_argument("exp_weights: n_learn must be >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("exp_weights: temperature must be > 0");

    // subtracting the minimum risk leaves the weights mathematically unchanged
    // and keeps every exponential in (0, 1]
    double r_min = risks.minCoeff();
    Eigen::VectorXd w(risks.size());
    for (Eigen::Index i = 0; i < risks.size(); ++i)
        w[i] = std::exp(-static_cast<double>(n_learn) * (risks[i] - r_min) / T);
    w /= w.sum();

    WeightVector out;
    out.weights = std::move(w);
    out.temperature = T;
    out.source_risks = risks;
    out.n_learn = n_learn;
    return out;
}

/// Index of the minimal risk; ties resolve to the smallest index.
inline int erm_select(const Eigen::VectorXd& risks) {
    if (risks.size() < 1) throw std::invalid_argument("erm_select: empty risk vector");
    int best = 0;
    for (Eigen::Index i = 1; i < risks.size(); ++i)
        if (risks[i] < risks[best]) best = static_cast<int>(i);
    return best;
}

/// Argmax of a weight vector with the same tie rule as erm_select.
inline int argmax_weight(const Eigen::VectorXd& weights) {
    int best = 0;
    for (Eigen::Index i = 1; i < weights.size(); ++i)
        if (weights[i] > weights[best]) best = static_cast<int>(i);
    return best;
}

inline std::vector<double> default_T_set() {
    return {10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0};
}

// ---------------------------------------------------------------------------
// Train/learn split
// ---------------------------------------------------------------------------

struct SplitPlan {
    std::vector<int> train_idx;  // sorted ascending
    std::vector<int> learn_idx;  // sorted ascending
    int m = 0;                   // training size
    int l = 0;                   // learning size
    int n = 0;
};

inline SplitPlan make_split(int n, double frac, std::uint64_t seed) {
    if (!(frac > 0.0 && frac < 1.0))
        throw std::invalid_argument("make_split: frac must lie in (0,1)");
    int m = static_cast<int>(std::lround(frac * n));
    if (m < 1 || n - m < 1)
        throw std::invalid_argument("make_split: n = " + std::to_string(n) +
                                    " is too small to split with frac = " + std::to_string(frac));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);

    SplitPlan plan;
    plan.train_idx.assign(idx.begin(), idx.begin() + m);
    plan.learn_idx.assign(idx.begin() + m, idx.end());
    std::sort(plan.train_idx.begin(), plan.train_idx.end());
    std::sort(plan.learn_idx.begin(), plan.learn_idx.end());
    plan.m = m;
    plan.l = n - m;
    plan.n = n;
    return plan;
}

// ---------------------------------------------------------------------------
// Temperature selection
// ---------------------------------------------------------------------------

enum class TScoreMode { train, learn, full };

inline TScoreMode t_score_mode_from_name(const std::string& name) {
    if (name == "train") return TScoreMode::train;
    if (name == "learn") return TScoreMode::learn;
    if (name == "full") return TScoreMode::full;
    throw std::invalid_argument("unknown temperature scoring sample: " + name);
}

inline std::string t_score_mode_name(TScoreMode mode) {
    switch (mode) {
        case TScoreMode::train: return "train";
        case TScoreMode::learn: return "learn";
        case TScoreMode::full: return "full";
    }
    return "?";
}

struct TemperatureSelection {
    double temperature = 0.0;
    WeightVector weights;
    Eigen::VectorXd t_scores;  // sum of squared residuals per T_set entry
};

/// Core scan: candidate predictions are given as a (candidates x score points)
/// matrix. For each T the aggregate is scored by its squared residual sum on
/// the supplied responses; ties resolve to the smallest T.
inline TemperatureSelection select_temperature_from_predictions(
    const Eigen::MatrixXd& cand_preds, const Eigen::VectorXd& y_score,
    const Eigen::VectorXd& risks, int n_learn, const std::vector<double>& T_set) {
    if (T_set.empty()) throw std::invalid_argument("select_temperature: empty temperature set");
    if (cand_preds.rows() != risks.size() || cand_preds.cols() != y_score.size())
        throw std::invalid_argument("select_temperature: prediction matrix shape mismatch");

    TemperatureSelection out;
    out.t_scores.resize(static_cast<Eigen::Index>(T_set.size()));
    int best = -1;
    for (std::size_t t = 0; t < T_set.size(); ++t) {
        WeightVector wv = exp_weights(risks, n_learn, T_set[t]);
        double score = (y_score - cand_preds.transpose() * wv.weights).squaredNorm();
        out.t_scores[static_cast<Eigen::Index>(t)] = score;
        bool better = best < 0 || score < out.t_scores[best] ||
                      (score == out.t_scores[best] && T_set[t] < T_set[static_cast<std::size_t>(best)]);
        if (better) {
            best = static_cast<int>(t);
            out.temperature = T_set[t];
            out.weights = std::move(wv);
        }
    }
    return out;
}

/// Predictor-level wrapper: evaluates each candidate on the scoring dataset.
inline TemperatureSelection select_temperature(const std::vector<Predictor>& candidates,
                                               const Eigen::VectorXd& risks, int n_learn,
                                               const Dataset& scoring_data,
                                               const std::vector<double>& T_set) {
    validate_dataset(scoring_data);
    Eigen::MatrixXd preds(static_cast<Eigen::Index>(candidates.size()), scoring_data.n());
    for (std::size_t c = 0; c < candidates.size(); ++c)
        for (int i = 0; i < scoring_data.n(); ++i)
            preds(static_cast<Eigen::Index>(c), i) =
                candidates[c](scoring_data.xs[static_cast<std::size_t>(i)]);
    return select_temperature_from_predictions(preds, scoring_data.ys, risks, n_learn, T_set);
}

// ---------------------------------------------------------------------------
// Split-and-aggregate
// ---------------------------------------------------------------------------

/// Convex combination of kernel ridge candidates fitted on the training half,
/// weighted from their empirical risks on the learning half.
struct AggregateModel {
    std::vector<KrrModel> candidates;
    WeightVector weights;
    SplitPlan plan;
    Eigen::VectorXd t_scores;  // temperature scan record
};

inline double aggregate_predict(const AggregateModel& model, const Point& x) {
    double value = 0.0;
    for (std::size_t c = 0; c < model.candidates.size(); ++c)
        value += model.weights.weights[static_cast<Eigen::Index>(c)] *
                 predict(model.candidates[c], x);
    return value;
}

inline Predictor as_predictor(AggregateModel model) {
    auto shared = std::make_shared<const AggregateModel>(std::move(model));
    return [shared](const Point& x) { return aggregate_predict(*shared, x); };
}

namespace detail {

inline bool same_kernel(const KernelSpec& a, const KernelSpec& b) {
    return a.family == b.family && a.d == b.d &&
           (a.family != KernelFamily::gaussian || a.width == b.width);
}

}  // namespace detail

/// Steps 1-3 of the aggregation scheme: split the sample, fit one candidate
/// per grid entry on the training half, compute their (frozen) empirical
/// risks on the learning half, and build exponential weights with the
/// temperature chosen on the configured scoring sample.
inline AggregateModel fit_aggregate(const Dataset& data, const std::vector<PermConfig>& lambda_grid,
                                    const std::vector<double>& T_set, std::uint64_t seed,
                                    double frac = 0.75, TScoreMode t_score = TScoreMode::full) {
    validate_dataset(data);
    if (lambda_grid.empty()) throw std::invalid_argument("fit_aggregate: empty candidate grid");
    SplitPlan plan = make_split(data.n(), frac, seed);
    Dataset train = subset(data, plan.train_idx);
    Dataset learn = subset(data, plan.learn_idx);

    bool shared_kernel = true;
    for (const PermConfig& config : lambda_grid)
        shared_kernel = shared_kernel && detail::same_kernel(config.kernel, lambda_grid[0].kernel);

    const int n_cand = static_cast<int>(lambda_grid.size());
    std::vector<KrrModel> candidates;
    candidates.reserve(lambda_grid.size());
    Eigen::MatrixXd G_train;
    if (shared_kernel) G_train = gram(lambda_grid[0].kernel, train.xs);
    for (int c = 0; c < n_cand; ++c) {
        try {
            const PermConfig& config = lambda_grid[static_cast<std::size_t>(c)];
            candidates.push_back(shared_kernel
                                     ? fit_krr_given_gram(train.xs, G_train, train.ys, config)
                                     : fit_krr(train, config));
        } catch (const std::exception& e) {
            throw std::runtime_error("fit_aggregate: candidate " + std::to_string(c) + " (h = " +
                                     std::to_string(lambda_grid[static_cast<std::size_t>(c)].h) +
                                     ") failed: " + e.what());
        }
    }

    auto prediction_matrix = [&](const Dataset& sample,
                                 const Eigen::MatrixXd* precomputed_cross) -> Eigen::MatrixXd {
        Eigen::MatrixXd preds(n_cand, sample.n());
        if (shared_kernel && !lambda_grid[0].clamp) {
            const Eigen::MatrixXd& K =
                precomputed_cross ? *precomputed_cross
                                  : cross_gram(lambda_grid[0].kernel, train.xs, sample.xs);
            for (int c = 0; c < n_cand; ++c)
                preds.row(c) = (K.transpose() * candidates[static_cast<std::size_t>(c)].dual_coeffs)
                                   .transpose()
                                   .array() +
                               candidates[static_cast<std::size_t>(c)].intercept_value;
        } else {
            for (int c = 0; c < n_cand; ++c)
                for (int i = 0; i < sample.n(); ++i)
                    preds(c, i) = predict(candidates[static_cast<std::size_t>(c)],
                                          sample.xs[static_cast<std::size_t>(i)]);
        }
        return preds;
    };

    Eigen::MatrixXd preds_learn = prediction_matrix(learn, nullptr);
    Eigen::VectorXd risks(n_cand);
    for (int c = 0; c < n_cand; ++c)
        risks[c] = (learn.ys - preds_learn.row(c).transpose()).squaredNorm() / learn.n();

    // the weight exponent keeps the full sample size as its multiplier (the
    // learning half only supplies the risks); the canonical temperature range
    // {10..100} is calibrated to that scaling
    TemperatureSelection selection;
    switch (t_score) {
        case TScoreMode::train: {
            Eigen::MatrixXd preds_train =
                prediction_matrix(train, shared_kernel ? &G_train : nullptr);
            selection = select_temperature_from_predictions(preds_train, train.ys, risks,
                                                            plan.n, T_set);
            break;
        }
        case TScoreMode::learn:
            selection =
                select_temperature_from_predictions(preds_learn, learn.ys, risks, plan.n, T_set);
            break;
        case TScoreMode::full: {
            Eigen::MatrixXd preds_full = prediction_matrix(data, nullptr);
            selection =
                select_temperature_from_predictions(preds_full, data.ys, risks, plan.n, T_set);
            break;
        }
    }

    AggregateModel model;
    model.candidates = std::move(candidates);
    model.weights = std::move(selection.weights);
    model.plan = std::move(plan);
    model.t_scores = std::move(selection.t_scores);
    return model;
}

// ---------------------------------------------------------------------------
// Jackknife averaging
// ---------------------------------------------------------------------------

/// Mean of J aggregates built from independent splits of the same sample.
struct JackknifeModel {
    std::vector<AggregateModel> replicates;
};

inline double jackknife_predict(const JackknifeModel& model, const Point& x) {
    double acc = 0.0;
    for (const AggregateModel& replicate : model.replicates)
        acc += aggregate_predict(replicate, x);
    return acc / static_cast<double>(model.replicates.size());
}

inline Predictor as_predictor(JackknifeModel model) {
    auto shared = std::make_shared<const JackknifeModel>(std::move(model));
    return [shared](const Point& x) { return jackknife_predict(*shared, x); };
}

inline JackknifeModel jackknife_aggregate(const Dataset& data,
                                          const std::vector<PermConfig>& lambda_grid,
                                          const std::vector<double>& T_set, int J,
                                          std::uint64_t seed, double frac = 0.75,
                                          TScoreMode t_score = TScoreMode::full) {
    if (J < 1) throw std::invalid_argument("jackknife_aggregate: J must be >= 1");
    JackknifeModel model;
    model.replicates.reserve(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j)
        model.replicates.push_back(fit_aggregate(data, lambda_grid, T_set,
                                                 derive_seed(seed, static_cast<std::uint64_t>(j)),
                                                 frac, t_score));
    return model;
}

// ---------------------------------------------------------------------------
// Smoothness grids
// ---------------------------------------------------------------------------

/// Arithmetic grid of decay exponents l with step (log n)^{-1}, each paired
/// with the bandwidth a * n^{-l/(2l+1)}. n enters only through log n and the
/// power, so it is accepted as a real.
inline std::vector<std::pair<double, double>> build_rkhs_grid(double l_min, double l_max, double n,
                                                              double a = 1.0) {
    if (!(l_min > 0.5))
        throw std::domain_error("build_rkhs_grid: l_min must exceed 1/2 (out of regime)");
    if (!(l_max >= l_min)) throw std::invalid_argument("build_rkhs_grid: need l_min <= l_max");
    if (!(n >= 3.0)) throw std::invalid_argument("build_rkhs_grid: need n >= 3");
    if (!(a > 0.0)) throw std::invalid_argument("build_rkhs_grid: need a > 0");
    double step = 1.0 / std::log(n);
    std::vector<std::pair<double, double>> grid;
    double tol = 1e-12 * std::max(1.0, std::abs(l_max));
    for (int k = 0;; ++k) {
        double l = l_min + k * step;
        if (l > l_max + tol) break;
        grid.emplace_back(l, a * std::pow(n, -l / (2.0 * l + 1.0)));
    }
    return grid;
}

/// Uniform discretization of an anisotropic smoothness cube together with the
/// per-point harmonic-mean smoothness, complexity and bandwidth.
struct SmoothnessGrid {
    int d = 1;
    Eigen::VectorXd s_min, s_max;
    std::vector<int> step_count;  // points per axis
    std::vector<Eigen::VectorXd> grid_points;
    Eigen::VectorXd sbar;       // harmonic mean per point
    Eigen::VectorXd beta;       // d / sbar
    Eigen::VectorXd bandwidth;  // n^{-sbar/(2 sbar + d)}
};

inline SmoothnessGrid build_besov_grid(const Eigen::VectorXd& s_min, const Eigen::VectorXd& s_max,
                                       double n) {
    const int d = static_cast<int>(s_min.size());
    if (d < 1 || s_max.size() != d)
        throw std::invalid_argument("build_besov_grid: smoothness bounds must agree in dimension");
    if (!(n >= 3.0)) throw std::invalid_argument("build_besov_grid: need n >= 3");
    for (int i = 0; i < d; ++i) {
        if (!(s_min[i] > 0.0))
            throw std::invalid_argument("build_besov_grid: smoothness must be positive");
        if (!(s_max[i] >= s_min[i]))
            throw std::invalid_argument("build_besov_grid: need s_min <= s_max coordinatewise");
    }
    double log_n = std::log(n);

    SmoothnessGrid grid;
    grid.d = d;
    grid.s_min = s_min;
    grid.s_max = s_max;
    grid.step_count.resize(static_cast<std::size_t>(d));
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) {
        // 1e-9 guards the floor against representation error in the product
        int count = static_cast<int>(std::floor((s_max[i] - s_min[i]) * log_n + 1e-9));
        if (count < 1)
            throw std::runtime_error(
                "build_besov_grid: empty grid on axis " + std::to_string(i) + "; the range " +
                std::to_string(s_max[i] - s_min[i]) + " is below the step 1/log n = " +
                std::to_string(1.0 / log_n));
        grid.step_count[static_cast<std::size_t>(i)] = count;
        total *= static_cast<std::size_t>(count);
    }

    grid.grid_points.reserve(total);
    grid.sbar.resize(static_cast<Eigen::Index>(total));
    grid.beta.resize(static_cast<Eigen::Index>(total));
    grid.bandwidth.resize(static_cast<Eigen::Index>(total));
    std::vector<int> ticks(static_cast<std::size_t>(d), 1);  // per-axis k, starting at 1
    for (std::size_t p = 0; p < total; ++p) {
        Eigen::VectorXd s(d);
        double inv_sum = 0.0;
        for (int i = 0; i < d; ++i) {
            s[i] = s_min[i] + ticks[static_cast<std::size_t>(i)] / log_n;
            inv_sum += 1.0 / s[i];
        }
        double sbar = static_cast<double>(d) / inv_sum;
        grid.grid_points.push_back(std::move(s));
        grid.sbar[static_cast<Eigen::Index>(p)] = sbar;
        grid.beta[static_cast<Eigen::Index>(p)] = static_cast<double>(d) / sbar;
        grid.bandwidth[static_cast<Eigen::Index>(p)] =
            std::pow(n, -sbar / (2.0 * sbar + static_cast<double>(d)));
        // advance the odometer, last axis fastest
        for (int i = d - 1; i >= 0; --i) {
            if (++ticks[static_cast<std::size_t>(i)] <= grid.step_count[static_cast<std::size_t>(i)])
                break;
            ticks[static_cast<std::size_t>(i)] = 1;
        }
    }
    return grid;
}

}  // namespace permagg

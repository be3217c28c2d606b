#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "permagg/aggregation.hpp"
#include "permagg/parallel.hpp"
#include "permagg/rng.hpp"

namespace permagg {

// ---------------------------------------------------------------------------
// Adversarial dictionary for the selector-vs-aggregate gap study
// ---------------------------------------------------------------------------
//
// The dictionary consists of M sign functions zeta_1..zeta_M whose values at
// the design points are independent Rademacher variables. The regression
// function is 3h/2 + (h/2) zeta_M, so every dictionary element is exactly a
// distance h^2... more precisely
//   || zeta_j - f0 ||^2 = 5h^2/2 + 1          (j != M)
//   || zeta_M - f0 ||^2 = 5h^2/2 + 1 - h,
// which makes zeta_M the unique best element with a margin of exactly h.

struct DyadicSetup {
    int M = 2;           // dictionary size
    int n = 1;           // sample size
    double C = 4.0;      // margin scale
    double sigma = 1.0;  // noise level
    double h = 0.0;      // margin, (C/4) sqrt(log M / n)
    bool in_regime = true;
};

inline DyadicSetup make_dyadic_setup(int M, int n, double C = 4.0, double sigma = 1.0) {
    if (M < 2) throw std::invalid_argument("make_dyadic_setup: need M >= 2");
    if (n < 1) throw std::invalid_argument("make_dyadic_setup: need n >= 1");
    if (!(C > 0.0)) throw std::invalid_argument("make_dyadic_setup: need C > 0");
    if (!(sigma >= 0.0)) throw std::invalid_argument("make_dyadic_setup: need sigma >= 0");
    DyadicSetup setup;
    setup.M = M;
    setup.n = n;
    setup.C = C;
    setup.sigma = sigma;
    setup.h = (C / 4.0) * std::sqrt(std::log(static_cast<double>(M)) / n);
    setup.in_regime =
        M < 3 || std::log(static_cast<double>(M - 1) * static_cast<double>(M - 2)) / n <= 0.25;
    return setup;
}

/// Population squared distance of dictionary element j (0-based) to the
/// regression function, noise excluded.
inline double dictionary_risk(const DyadicSetup& setup, int j) {
    if (j < 0 || j >= setup.M) throw std::out_of_range("dictionary_risk: index out of range");
    double base = 2.5 * setup.h * setup.h + 1.0;
    return j == setup.M - 1 ? base - setup.h : base;
}

/// One draw: the n x M matrix of dictionary values (entries +-1) and the
/// responses y_i = 3h/2 + (h/2) zeta_iM + sigma eps_i.
struct DyadicSample {
    Eigen::MatrixXd zeta;
    Eigen::VectorXd ys;

    int n() const { return static_cast<int>(zeta.rows()); }
    int M() const { return static_cast<int>(zeta.cols()); }
};

inline DyadicSample sample_dyadic(const DyadicSetup& setup, std::mt19937_64& rng) {
    DyadicSample sample;
    sample.zeta.resize(setup.n, setup.M);
    // one generator word carries 64 signs; rows are filled in order so the
    // draw sequence is independent of any downstream parallelism
    for (int i = 0; i < setup.n; ++i) {
        for (int base = 0; base < setup.M; base += 64) {
            std::uint64_t word = rng();
            int width = std::min(64, setup.M - base);
            for (int b = 0; b < width; ++b)
                sample.zeta(i, base + b) = ((word >> b) & 1u) ? 1.0 : -1.0;
        }
    }
    sample.ys.resize(setup.n);
    for (int i = 0; i < setup.n; ++i)
        sample.ys[i] = 1.5 * setup.h + 0.5 * setup.h * sample.zeta(i, setup.M - 1);
    if (setup.sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, setup.sigma);
        for (int i = 0; i < setup.n; ++i) sample.ys[i] += noise(rng);
    }
    return sample;
}

/// Empirical risks (1/n) sum_i (y_i - zeta_ij)^2 for every dictionary
/// element. Since zeta_ij^2 = 1 this reduces to one matrix-vector product.
inline Eigen::VectorXd dictionary_empirical_risks(const DyadicSample& sample) {
    const double n = static_cast<double>(sample.n());
    double level = (sample.ys.squaredNorm() + n) / n;
    return Eigen::VectorXd::Constant(sample.M(), level) -
           (2.0 / n) * (sample.zeta.transpose() * sample.ys);
}

/// Population squared distance of the mixture sum_j theta_j zeta_j to the
/// regression function. theta must lie on the simplex.
inline double mixture_l2_risk(const DyadicSetup& setup, const Eigen::VectorXd& theta) {
    if (theta.size() != setup.M)
        throw std::invalid_argument("mixture_l2_risk: weight dimension mismatch");
    if (theta.minCoeff() < -1e-9 || std::abs(theta.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("mixture_l2_risk: weights must lie on the simplex");
    return theta.squaredNorm() - setup.h * theta[setup.M - 1] + 2.5 * setup.h * setup.h;
}

// ---------------------------------------------------------------------------
// Monte Carlo excess-risk estimates
// ---------------------------------------------------------------------------

struct ExcessResult {
    double excess = 0.0;        // mean population excess over the best element
    double p_not_target = 0.0;  // fraction of draws whose pick misses zeta_M
    int reps = 0;
};

/// Excess risk of (possibly penalized) empirical risk minimization over the
/// dictionary. Selection ties resolve to the smallest index. The rep-r draw
/// uses the generator seeded with derive_seed(seed, r), so results do not
/// depend on the worker count; optional out-parameter records selections.
inline ExcessResult erm_excess_mc(const DyadicSetup& setup, int reps,
                                  const std::vector<double>& pen, std::uint64_t seed,
                                  std::vector<int>* selections = nullptr) {
    if (reps < 1) throw std::invalid_argument("erm_excess_mc: need reps >= 1");
    if (!pen.empty() && static_cast<int>(pen.size()) != setup.M)
        throw std::invalid_argument("erm_excess_mc: penalty size must be 0 or M");
    std::vector<int> picks(static_cast<std::size_t>(reps));
    parallel_for(reps, [&](int r) {
        auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        DyadicSample sample = sample_dyadic(setup, rng);
        Eigen::VectorXd risks = dictionary_empirical_risks(sample);
        if (!pen.empty())
            for (int j = 0; j < setup.M; ++j) risks[j] += pen[static_cast<std::size_t>(j)];
        picks[static_cast<std::size_t>(r)] = erm_select(risks);
    });
    long misses = 0;
    for (int pick : picks) misses += pick != setup.M - 1 ? 1 : 0;
    ExcessResult out;
    out.p_not_target = static_cast<double>(misses) / reps;
    out.excess = setup.h * out.p_not_target;  // every wrong pick costs exactly h
    out.reps = reps;
    if (selections) *selections = std::move(picks);
    return out;
}

/// Excess risk of the exponential-weights mixture with the temperature chosen
/// per draw by the squared-residual score on the same sample (ties to the
/// smaller temperature).
inline ExcessResult aggregate_excess_mc(const DyadicSetup& setup, int reps,
                                        const std::vector<double>& T_set, std::uint64_t seed) {
    if (reps < 1) throw std::invalid_argument("aggregate_excess_mc: need reps >= 1");
    if (T_set.empty()) throw std::invalid_argument("aggregate_excess_mc: empty temperature set");
    std::vector<double> excesses(static_cast<std::size_t>(reps));
    std::vector<int> peaks(static_cast<std::size_t>(reps));
    const double best_risk = dictionary_risk(setup, setup.M - 1);
    parallel_for(reps, [&](int r) {
        auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
        DyadicSample sample = sample_dyadic(setup, rng);
        Eigen::VectorXd risks = dictionary_empirical_risks(sample);
        double best_score = 0.0;
        double best_T = 0.0;
        Eigen::VectorXd best_theta;
        for (std::size_t t = 0; t < T_set.size(); ++t) {
            WeightVector wv = exp_weights(risks, setup.n, T_set[t]);
            double score = (sample.ys - sample.zeta * wv.weights).squaredNorm();
            if (t == 0 || score < best_score || (score == best_score && T_set[t] < best_T)) {
                best_score = score;
                best_T = T_set[t];
                best_theta = std::move(wv.weights);
            }
        }
        excesses[static_cast<std::size_t>(r)] = mixture_l2_risk(setup, best_theta) - best_risk;
        peaks[static_cast<std::size_t>(r)] = argmax_weight(best_theta);
    });
    ExcessResult out;
    double acc = 0.0;
    long misses = 0;
    for (int r = 0; r < reps; ++r) {
        acc += excesses[static_cast<std::size_t>(r)];
        misses += peaks[static_cast<std::size_t>(r)] != setup.M - 1 ? 1 : 0;
    }
    out.excess = acc / reps;
    out.p_not_target = static_cast<double>(misses) / reps;
    out.reps = reps;
    return out;
}

}  // namespace permagg

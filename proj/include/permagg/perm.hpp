#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "permagg/core.hpp"
#include "permagg/kernels.hpp"

namespace permagg {

/// Configuration of one penalized least-squares fit: squared empirical risk
/// plus h^2 |f|_K^alpha over the reproducing-kernel class. Only alpha = 2 has
/// an exact finite-dimensional solution, so the exponent is fixed.
struct PermConfig {
    KernelSpec kernel;
    double h = 1.0;
    double alpha = 2.0;
    bool intercept = false;
    std::optional<double> clamp;  // truncate predictions to [-Q, Q] when set
};

inline void validate_perm_config(const PermConfig& config) {
    validate_kernel(config.kernel);
    if (!(config.h > 0.0)) throw std::invalid_argument("perm: bandwidth h must be > 0");
    if (config.alpha != 2.0)
        throw std::invalid_argument("perm: only the quadratic penalty (alpha = 2) is solvable");
    if (config.clamp && !(*config.clamp > 0.0))
        throw std::invalid_argument("perm: clamp level must be > 0");
}

/// Fitted kernel ridge model: f(x) = sum_i dual_coeffs[i] K(train_points[i], x)
/// + intercept_value.
struct KrrModel {
    std::vector<Point> train_points;
    Eigen::VectorXd dual_coeffs;
    double intercept_value = 0.0;
    PermConfig config;
    double rkhs_norm_sq = 0.0;  // alpha' G alpha, cached at fit time
};

namespace detail {

// rhs - A*x accumulated in extended precision; the plain double-precision
// residual carries O(eps*||A||*||x||) measurement noise, which matters when
// the ridge mu is many orders below ||G|| and ||x|| is large
inline Eigen::VectorXd extended_residual(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs,
                                         const Eigen::VectorXd& x) {
    const Eigen::Index n = A.rows();
    std::vector<long double> acc(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] = rhs[i];
    for (Eigen::Index j = 0; j < n; ++j) {
        const long double xj = x[j];
        const double* col = A.data() + j * n;
        for (Eigen::Index i = 0; i < n; ++i)
            acc[static_cast<std::size_t>(i)] -= static_cast<long double>(col[i]) * xj;
    }
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = static_cast<double>(acc[static_cast<std::size_t>(i)]);
    return r;
}

template <class Solve>
inline Eigen::VectorXd refine_ridge_solution(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs,
                                             const Solve& solve) {
    Eigen::VectorXd alpha = solve(rhs);
    const double target = 5e-9 * std::max(rhs.norm(), 1e-300);
    for (int pass = 0; pass < 4; ++pass) {
        Eigen::VectorXd r = extended_residual(A, rhs, alpha);
        if (r.norm() <= target) break;
        alpha += solve(r);
    }
    return alpha;
}

inline Eigen::VectorXd solve_ridge_system(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs,
                                          double mu) {
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success)
        return refine_ridge_solution(A, rhs, [&](const Eigen::VectorXd& b) { return llt.solve(b); });
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() == Eigen::Success)
        return refine_ridge_solution(A, rhs, [&](const Eigen::VectorXd& b) { return ldlt.solve(b); });
    throw std::runtime_error("fit_krr: ridge system factorization failed (mu = " +
                             std::to_string(mu) + ")");
}

}  // namespace detail

/// Fit with a precomputed Gram matrix of the training points (shared-Gram path
/// used by grid searches; identical results to fit_krr).
inline KrrModel fit_krr_given_gram(const std::vector<Point>& points, const Eigen::MatrixXd& G,
                                   const Eigen::VectorXd& ys, const PermConfig& config) {
    validate_perm_config(config);
    const int n = static_cast<int>(points.size());
    if (n < 1 || G.rows() != n || ys.size() != n)
        throw std::invalid_argument("fit_krr: points, gram and responses must agree in size");
    const double mu = static_cast<double>(n) * config.h * config.h;

    double intercept = config.intercept ? ys.mean() : 0.0;
    Eigen::VectorXd yc = ys.array() - intercept;
    Eigen::MatrixXd A = G;
    A.diagonal().array() += mu;
    Eigen::VectorXd alpha = detail::solve_ridge_system(A, yc, mu);

    double denom = std::max(yc.norm(), 1e-30);
    double residual = detail::extended_residual(A, yc, alpha).norm() / denom;
    if (!(residual <= 1e-8)) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
        double cond = svd.singularValues()(0) /
                      std::max(svd.singularValues()(svd.singularValues().size() - 1),
                               std::numeric_limits<double>::min());
        std::ostringstream msg;
        msg << std::scientific << std::setprecision(3) << "fit_krr: normal-equation residual "
            << residual << " exceeds 1e-8 (condition estimate " << cond << ")";
        throw std::runtime_error(msg.str());
    }

    KrrModel model;
    model.train_points = points;
    model.dual_coeffs = std::move(alpha);
    model.intercept_value = intercept;
    model.config = config;
    model.rkhs_norm_sq = std::max(0.0, model.dual_coeffs.dot(G * model.dual_coeffs));
    return model;
}

inline KrrModel fit_krr(const Dataset& data, const PermConfig& config) {
    validate_dataset(data);
    return fit_krr_given_gram(data.xs, gram(config.kernel, data.xs), data.ys, config);
}

inline double predict(const KrrModel& model, const Point& x) {
    double value = model.intercept_value;
    for (std::size_t i = 0; i < model.train_points.size(); ++i)
        value += model.dual_coeffs[static_cast<Eigen::Index>(i)] *
                 kernel_eval(model.config.kernel, model.train_points[i], x);
    if (model.config.clamp) {
        double Q = *model.config.clamp;
        value = std::min(std::max(value, -Q), Q);
    }
    return value;
}

inline Predictor as_predictor(KrrModel model) {
    auto shared = std::make_shared<const KrrModel>(std::move(model));
    return [shared](const Point& x) { return predict(*shared, x); };
}

/// R_n(model) + h^2 * |f|_K^2, the quantity the fit minimizes over the
/// representer span.
inline double penalized_objective(const KrrModel& model, const Dataset& data) {
    double risk = empirical_risk([&](const Point& x) { return predict(model, x); }, data);
    return risk + model.config.h * model.config.h * model.rkhs_norm_sq;
}

namespace detail {

inline Eigen::MatrixXd hat_matrix_given_gram(const Eigen::MatrixXd& G, double mu, bool intercept) {
    const Eigen::Index n = G.rows();
    // Build (G+muI)^{-1}G through the gram spectrum rather than a solve: with
    // gram eigenvalues clamped at zero the shrinkage factors l/(l+mu) land in
    // [0,1) by construction, which a finite-precision solve does not guarantee
    // for badly conditioned gram matrices.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    if (eig.info() != Eigen::Success)
        throw std::runtime_error("hat_matrix: gram eigendecomposition failed");
    Eigen::VectorXd shrink = eig.eigenvalues().cwiseMax(0.0);
    shrink = shrink.array() / (shrink.array() + mu);
    Eigen::MatrixXd S = eig.eigenvectors() * shrink.asDiagonal() * eig.eigenvectors().transpose();
    S = 0.5 * (S + S.transpose()).eval();
    if (!intercept) return S;
    // centered fit: fitted = mean(y) + S (y - mean(y)), i.e. P + S (I - P)
    Eigen::MatrixXd P = Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    return P + S * (Eigen::MatrixXd::Identity(n, n) - P);
}

}  // namespace detail

/// Linear-smoother matrix: fitted values = S * Y. Symmetric with eigenvalues
/// in [0,1) for the plain (no-intercept) fit; the centered fit additionally
/// reproduces constants exactly (eigenvalue 1 on the constant direction).
inline Eigen::MatrixXd hat_matrix(const Dataset& data, const PermConfig& config) {
    validate_dataset(data);
    validate_perm_config(config);
    Eigen::MatrixXd G = gram(config.kernel, data.xs);
    double mu = static_cast<double>(data.n()) * config.h * config.h;
    return detail::hat_matrix_given_gram(G, mu, config.intercept);
}

namespace detail {

inline double loocv_from_smoother(const Eigen::MatrixXd& S, const Eigen::VectorXd& ys) {
    const Eigen::Index n = ys.size();
    Eigen::VectorXd fitted = S * ys;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double leverage_gap = 1.0 - S(i, i);
        if (leverage_gap <= 1e-12)
            throw std::runtime_error(
                "loocv_score: degenerate smoother (leverage S_ii reaches 1; the fit "
                "interpolates observation " +
                std::to_string(i) + ")");
        double r = (ys[i] - fitted[i]) / leverage_gap;
        acc += r * r;
    }
    return acc / static_cast<double>(n);
}

inline double gcv_from_smoother(const Eigen::MatrixXd& S, const Eigen::VectorXd& ys) {
    const Eigen::Index n = ys.size();
    double trace = S.trace();
    double dof_gap = static_cast<double>(n) - trace;
    if (dof_gap <= 1e-12 * static_cast<double>(n))
        throw std::runtime_error("gcv_score: degenerate smoother (trace S reaches n)");
    double rss = (ys - S * ys).squaredNorm();
    return static_cast<double>(n) * rss / (dof_gap * dof_gap);
}

}  // namespace detail

/// Exact leave-one-out score of the linear smoother:
/// (1/n) sum ((Y_i - fitted_i)/(1 - S_ii))^2. For the plain fit this equals
/// the n-refit criterion with the effective ridge n h^2 held fixed.
inline double loocv_score(const Dataset& data, const PermConfig& config) {
    if (data.n() < 2) throw std::invalid_argument("loocv_score: needs n >= 2");
    return detail::loocv_from_smoother(hat_matrix(data, config), data.ys);
}

/// Generalized cross-validation: n * RSS / (n - tr S)^2.
inline double gcv_score(const Dataset& data, const PermConfig& config) {
    return detail::gcv_from_smoother(hat_matrix(data, config), data.ys);
}

enum class ScoreCriterion { loocv, gcv };

struct SelectionResult {
    double h = 0.0;
    int index = -1;
    Eigen::VectorXd scores;  // per grid entry, NaN where the smoother degenerated
};

/// Grid search over bandwidths for one kernel; ties resolve to the smallest h.
/// Degenerate grid points score NaN and are skipped.
inline SelectionResult select_h(const Dataset& data, const KernelSpec& kernel,
                                const std::vector<double>& h_grid, ScoreCriterion criterion,
                                bool intercept = false) {
    validate_dataset(data);
    if (h_grid.empty()) throw std::invalid_argument("select_h: empty bandwidth grid");
    if (data.n() < 2) throw std::invalid_argument("select_h: needs n >= 2");
    Eigen::MatrixXd G = gram(kernel, data.xs);

    SelectionResult result;
    result.scores.resize(static_cast<Eigen::Index>(h_grid.size()));
    for (std::size_t g = 0; g < h_grid.size(); ++g) {
        double h = h_grid[g];
        if (!(h > 0.0)) throw std::invalid_argument("select_h: bandwidths must be > 0");
        double mu = static_cast<double>(data.n()) * h * h;
        double score;
        try {
            Eigen::MatrixXd S = detail::hat_matrix_given_gram(G, mu, intercept);
            score = criterion == ScoreCriterion::loocv ? detail::loocv_from_smoother(S, data.ys)
                                                       : detail::gcv_from_smoother(S, data.ys);
        } catch (const std::runtime_error&) {
            score = std::numeric_limits<double>::quiet_NaN();
        }
        result.scores[static_cast<Eigen::Index>(g)] = score;
        bool better = !std::isnan(score) &&
                      (result.index < 0 || score < result.scores[result.index] ||
                       (score == result.scores[result.index] && h < result.h));
        if (better) {
            result.index = static_cast<int>(g);
            result.h = h;
        }
    }
    if (result.index < 0)
        throw std::runtime_error("select_h: selection failed; every grid point degenerated");
    return result;
}

}  // namespace permagg

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "permagg/core.hpp"

namespace permagg {

enum class KernelFamily { gaussian, cubic_spline, brownian, linear };

/// Reproducing kernel. gaussian/linear accept any dimension; cubic_spline and
/// brownian are one-dimensional kernels on [0,1].
struct KernelSpec {
    KernelFamily family = KernelFamily::gaussian;
    int d = 1;
    double width = 1.0;  // gaussian only
};

inline std::string kernel_family_name(KernelFamily family) {
    switch (family) {
        case KernelFamily::gaussian: return "gaussian";
        case KernelFamily::cubic_spline: return "cubic-spline";
        case KernelFamily::brownian: return "brownian";
        case KernelFamily::linear: return "linear";
    }
    return "?";
}

inline KernelFamily kernel_family_from_name(const std::string& name) {
    if (name == "gaussian") return KernelFamily::gaussian;
    if (name == "cubic-spline") return KernelFamily::cubic_spline;
    if (name == "brownian") return KernelFamily::brownian;
    if (name == "linear") return KernelFamily::linear;
    throw std::invalid_argument("unknown kernel family: " + name);
}

inline void validate_kernel(const KernelSpec& kernel) {
    if (kernel.d < 1) throw std::invalid_argument("kernel: dimension must be >= 1");
    if (kernel.family == KernelFamily::gaussian && !(kernel.width > 0.0))
        throw std::invalid_argument("kernel: gaussian width must be > 0");
    if ((kernel.family == KernelFamily::cubic_spline || kernel.family == KernelFamily::brownian) &&
        kernel.d != 1)
        throw std::invalid_argument("kernel: " + kernel_family_name(kernel.family) +
                                    " is one-dimensional");
}

namespace detail {

inline double unit_interval_coordinate(const Point& x, const char* family) {
    if (x.size() != 1)
        throw std::invalid_argument(std::string(family) + " kernel expects 1-d points");
    double t = x[0];
    constexpr double tol = 1e-12;
    if (t < -tol || t > 1.0 + tol)
        throw std::domain_error(std::string(family) + " kernel is defined on [0,1]; got " +
                                std::to_string(t));
    return std::min(std::max(t, 0.0), 1.0);
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& kernel, const Point& a, const Point& b) {
    switch (kernel.family) {
        case KernelFamily::gaussian: {
            double s2 = (a - b).squaredNorm();
            return std::exp(-s2 / (2.0 * kernel.width * kernel.width));
        }
        case KernelFamily::cubic_spline: {
            double s = detail::unit_interval_coordinate(a, "cubic-spline");
            double t = detail::unit_interval_coordinate(b, "cubic-spline");
            double m = std::min(s, t);
            double M = std::max(s, t);
            // K(s,t) = int_0^1 (s-u)_+ (t-u)_+ du, the W2^2 kernel on
            // functions with f(0) = f'(0) = 0
            return m * m * (3.0 * M - m) / 6.0;
        }
        case KernelFamily::brownian: {
            double s = detail::unit_interval_coordinate(a, "brownian");
            double t = detail::unit_interval_coordinate(b, "brownian");
            return std::min(s, t);
        }
        case KernelFamily::linear:
            return a.dot(b);
    }
    throw std::logic_error("kernel_eval: unknown family");
}

inline Eigen::MatrixXd gram(const KernelSpec& kernel, const std::vector<Point>& points) {
    validate_kernel(kernel);
    const int n = static_cast<int>(points.size());
    Eigen::MatrixXd G(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            double v = kernel_eval(kernel, points[static_cast<std::size_t>(i)],
                                   points[static_cast<std::size_t>(j)]);
            G(i, j) = v;
            G(j, i) = v;
        }
    }
    return G;
}

/// Rectangular kernel matrix K[i][j] = K(rows[i], cols[j]).
inline Eigen::MatrixXd cross_gram(const KernelSpec& kernel, const std::vector<Point>& rows,
                                  const std::vector<Point>& cols) {
    validate_kernel(kernel);
    Eigen::MatrixXd K(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                kernel_eval(kernel, rows[i], cols[j]);
    return K;
}

// ---------------------------------------------------------------------------
// Eigenvalue-decay diagnostic
// ---------------------------------------------------------------------------

/// Least-squares fit of log lambda_k ~ intercept - decay_exponent * log k over
/// the eigenvalues of Gram/n, the empirical proxy for the kernel operator
/// spectrum.
struct SpectrumFit {
    Eigen::VectorXd eigenvalues;  // of Gram/n, sorted descending
    double decay_exponent = 0.0;
    double intercept = 0.0;
    std::pair<int, int> fit_range{1, 1};  // 1-based, inclusive
    double residual = 0.0;                // root mean squared fit residual
};

inline SpectrumFit estimate_decay(const Eigen::MatrixXd& gram_matrix, int n,
                                  std::pair<int, int> fit_range) {
    if (gram_matrix.rows() != gram_matrix.cols() || gram_matrix.rows() < 1)
        throw std::invalid_argument("estimate_decay: gram must be square and nonempty");
    if (n < 1) throw std::invalid_argument("estimate_decay: n must be >= 1");
    const int rows = static_cast<int>(gram_matrix.rows());
    auto [k_min, k_max] = fit_range;
    if (k_min < 1 || k_max > rows || k_min >= k_max)
        throw std::invalid_argument("estimate_decay: fit_range must satisfy 1 <= k_min < k_max <= n");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram_matrix / static_cast<double>(n));
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("estimate_decay: eigendecomposition failed");
    Eigen::VectorXd lambda = solver.eigenvalues().reverse();  // descending

    double lambda_max = std::max(lambda[0], 0.0);
    double positive_floor = 1e-14 * std::max(lambda_max, 1e-300);
    std::vector<double> xs, ys;
    for (int k = k_min; k <= k_max; ++k) {
        double lam = lambda[k - 1];
        if (lam > positive_floor) {
            xs.push_back(std::log(static_cast<double>(k)));
            ys.push_back(std::log(lam));
        }
    }
    if (xs.size() < 3)
        throw std::runtime_error(
            "estimate_decay: insufficient spectrum (fewer than 3 positive eigenvalues in range)");

    const double m = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    double denom = m * sxx - sx * sx;
    double slope = (m * sxy - sx * sy) / denom;
    double intercept = (sy - slope * sx) / m;
    double ssr = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double r = ys[i] - (intercept + slope * xs[i]);
        ssr += r * r;
    }

    SpectrumFit fit;
    fit.eigenvalues = lambda;
    fit.decay_exponent = -slope;
    fit.intercept = intercept;
    fit.fit_range = fit_range;
    fit.residual = std::sqrt(ssr / m);
    return fit;
}

/// Default fit range: k in [2, floor(n/4)], skipping the top eigenvalue and
/// the noisy spectral tail.
inline SpectrumFit estimate_decay(const Eigen::MatrixXd& gram_matrix, int n) {
    return estimate_decay(gram_matrix, n, {2, n / 4});
}

/// Bandwidth h = a * n^{-l/(2l+1)} from an eigenvalue decay exponent l.
inline double bandwidth_from_decay(double l, int n, double a) {
    if (!(l > 0.5))
        throw std::domain_error("bandwidth_from_decay: decay exponent must exceed 1/2");
    if (n < 1) throw std::invalid_argument("bandwidth_from_decay: n must be >= 1");
    if (!(a > 0.0)) throw std::invalid_argument("bandwidth_from_decay: a must be > 0");
    return a * std::pow(static_cast<double>(n), -l / (2.0 * l + 1.0));
}

}  // namespace permagg

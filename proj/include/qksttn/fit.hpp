#pragma once

// Power-law fit y = a * f^b by least squares on log y vs log f, with
// one-sigma uncertainties from linearization of the fit model around the
// optimum (residual-variance-scaled normal-equation covariance).

#include <cmath>
#include <vector>

#include "qksttn/common.hpp"

namespace qksttn {

struct PowerLawFit {
    double a = 0, b = 0;
    double sigma_a = 0, sigma_b = 0;
};

inline PowerLawFit fit_power_law(const std::vector<double>& f,
                                 const std::vector<double>& y) {
    const std::size_t n = f.size();
    if (n < 2 || y.size() != n)
        throw domain_error("fit_power_law: need at least two (f, y) points");
    for (std::size_t i = 0; i < n; ++i)
        if (!(f[i] > 0) || !(y[i] > 0))
            throw domain_error("fit_power_law: f and y must be strictly positive");

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double xi = std::log(f[i]), yi = std::log(y[i]);
        sx += xi;
        sy += yi;
        sxx += xi * xi;
        sxy += xi * yi;
    }
    double det = double(n) * sxx - sx * sx;
    if (std::abs(det) < 1e-30)
        throw domain_error("fit_power_law: degenerate abscissae (all f equal)");
    double log_a = (sxx * sy - sx * sxy) / det;
    double b = (double(n) * sxy - sx * sy) / det;

    double ssr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = std::log(y[i]) - (log_a + b * std::log(f[i]));
        ssr += r * r;
    }
    double s2 = (n > 2) ? ssr / double(n - 2) : 0.0;
    double var_log_a = s2 * sxx / det;
    double var_b = s2 * double(n) / det;

    PowerLawFit fit;
    fit.a = std::exp(log_a);
    fit.b = b;
    fit.sigma_a = fit.a * std::sqrt(var_log_a);  // linearized through exp
    fit.sigma_b = std::sqrt(var_b);
    return fit;
}

}  // namespace qksttn

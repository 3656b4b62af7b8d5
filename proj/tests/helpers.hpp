#pragma once

// Shared test utilities: independent oracles (kept deliberately separate
// from the library's code paths) and random object generators.

#include <complex>
#include <random>
#include <vector>

#include "qksttn/qcore.hpp"

namespace testutil {

using qksttn::CMat;
using qksttn::cxd;
using qksttn::RVec;

inline std::mt19937_64& test_rng(std::uint64_t seed = 0x5eed) {
    static std::mt19937_64 eng(seed);
    return eng;
}

inline CMat random_complex(Eigen::Index r, Eigen::Index c, std::mt19937_64& eng) {
    std::normal_distribution<double> n(0.0, 1.0);
    CMat a(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) a(i, j) = cxd(n(eng), n(eng));
    return a;
}

inline CMat random_hermitian(Eigen::Index d, std::mt19937_64& eng) {
    CMat a = random_complex(d, d, eng);
    return 0.5 * (a + a.adjoint());
}

inline qksttn::DensityMatrix random_density(Eigen::Index d, std::mt19937_64& eng) {
    CMat a = random_complex(d, d, eng);
    CMat rho = a * a.adjoint();
    rho /= rho.trace().real();
    qksttn::DensityMatrix out;
    out.m = 0.5 * (rho + rho.adjoint());
    return out;
}

// Kronecker product written independently of qksttn::kron.
inline CMat kron_oracle(const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            out(i, j) = a(i / b.rows(), j / b.cols()) * b(i % b.rows(), j % b.cols());
    return out;
}

// Truncated series sum_{k<=60} (iH)^k / k!.
inline CMat expm_taylor_oracle(const CMat& h) {
    const Eigen::Index d = h.rows();
    CMat ih = cxd(0, 1) * h;
    CMat term = CMat::Identity(d, d);
    CMat acc = CMat::Identity(d, d);
    for (int k = 1; k <= 60; ++k) {
        term = term * ih / double(k);
        acc += term;
    }
    return acc;
}

// Literal kron -> conjugate -> partial-trace composition for one node.
inline CMat apply_node_dense_oracle(const CMat& u, const CMat& rhoA, const CMat& rhoB) {
    const Eigen::Index chi = rhoA.rows();
    CMat big = u * kron_oracle(rhoA, rhoB) * u.adjoint();
    CMat out = CMat::Zero(chi, chi);
    for (Eigen::Index i = 0; i < chi; ++i)
        for (Eigen::Index j = 0; j < chi; ++j)
            for (Eigen::Index k = 0; k < chi; ++k)
                out(i, j) += big(i * chi + k, j * chi + k);
    return out;
}

// Explicitly enumerated generalized Gell-Mann table for the documented
// ordering: symmetric pairs row-major, then antisymmetric, then diagonal.
inline std::vector<CMat> gellmann_table(Eigen::Index d) {
    std::vector<CMat> basis;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = j + 1; k < d; ++k) pairs.emplace_back(j, k);
    for (auto [j, k] : pairs) {
        CMat g = CMat::Zero(d, d);
        g(j, k) = 1;
        g(k, j) = 1;
        basis.push_back(g);
    }
    for (auto [j, k] : pairs) {
        CMat g = CMat::Zero(d, d);
        g(j, k) = cxd(0, -1);
        g(k, j) = cxd(0, 1);
        basis.push_back(g);
    }
    for (Eigen::Index l = 1; l < d; ++l) {
        CMat g = CMat::Zero(d, d);
        for (Eigen::Index j = 0; j < l; ++j) g(j, j) = 1;
        g(l, l) = -double(l);
        g *= std::sqrt(2.0 / double(l * (l + 1)));
        basis.push_back(g);
    }
    return basis;
}

// Central finite difference of a scalar function of one coordinate.
template <typename F>
double central_diff(F&& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2 * h);
}

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

inline bool grad_close(double analytic, double numeric, double rel = 1e-5,
                       double abs_floor = 1e-8) {
    double err = std::abs(analytic - numeric);
    return err <= abs_floor + rel * std::max(std::abs(analytic), std::abs(numeric));
}

}  // namespace testutil

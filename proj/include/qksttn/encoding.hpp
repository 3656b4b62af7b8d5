#pragma once

// Quantum-kitchen-sink feature maps: per-episode random (later trainable)
// linear projections of classical data into rotation angles theta = Omega x
// + beta, single-qubit episode states, sparsity masks, and measurement
// sampling. Rotation axis is Y, so episode amplitudes are cos(theta/2) and
// sin(theta/2) and all episode states are real.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "qksttn/qcore.hpp"

namespace qksttn {

// Shot budget for measurement sampling; exact() is the infinite-shot limit
// and returns the basis-diagonal probabilities directly.
struct Shots {
    std::optional<std::uint64_t> n;

    static Shots exact() { return Shots{std::nullopt}; }
    static Shots count(std::uint64_t k) {
        if (k < 1) throw config_error("Shots: count must be >= 1");
        return Shots{k};
    }
    bool is_exact() const { return !n.has_value(); }
};

struct EncodingParams {
    Eigen::Index E = 0;  // episodes
    Eigen::Index p = 0;  // input dimension
    RMat omega;          // E x p, radians per unit feature; zero where masked
    RVec beta;           // E, radians
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;  // E x p
    double sigma = 0.0;  // init-time stddev of the nonzero omega entries

    Eigen::Index nonzeros_in_row(Eigen::Index e) const {
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < p; ++i) r += mask(e, i) ? 1 : 0;
        return r;
    }
    // Re-zero masked entries; training steps call this after every update so
    // sparsity stays exact rather than approximate.
    void enforce_mask() {
        for (Eigen::Index e = 0; e < E; ++e)
            for (Eigen::Index i = 0; i < p; ++i)
                if (!mask(e, i)) omega(e, i) = 0.0;
    }
};

// Draw encoding parameters: each row's mask has exactly r nonzeros chosen
// uniformly without replacement, nonzero omega ~ N(0, sigma^2), beta ~
// U(0, 2*pi).
inline EncodingParams init_encoding(Eigen::Index E, Eigen::Index p, Eigen::Index r,
                                    double sigma, Rng& rng) {
    if (E < 1 || p < 1) throw config_error("init_encoding: E and p must be >= 1");
    if (r < 1 || r > p)
        throw config_error("init_encoding: nonzeros-per-episode r must be in [1, p]");
    if (!(sigma > 0)) throw config_error("init_encoding: sigma must be positive");
    EncodingParams enc;
    enc.E = E;
    enc.p = p;
    enc.sigma = sigma;
    enc.omega = RMat::Zero(E, p);
    enc.beta = RVec(E);
    enc.mask.setConstant(E, p, false);
    std::vector<Eigen::Index> idx(p);
    for (Eigen::Index e = 0; e < E; ++e) {
        for (Eigen::Index i = 0; i < p; ++i) idx[i] = i;
        // partial Fisher-Yates: first r entries are a uniform subset
        for (Eigen::Index i = 0; i < r; ++i) {
            Eigen::Index j = i + Eigen::Index(rng.integer(std::uint64_t(p - i)));
            std::swap(idx[i], idx[j]);
        }
        for (Eigen::Index i = 0; i < r; ++i) {
            enc.mask(e, idx[i]) = true;
            enc.omega(e, idx[i]) = rng.normal(0.0, sigma);
        }
        enc.beta[e] = rng.uniform(0.0, 2.0 * M_PI);
    }
    return enc;
}

// theta_e = Omega_e . x + beta_e
inline RVec angles(const EncodingParams& enc, const RVec& x) {
    if (x.size() != enc.p)
        throw domain_error("angles: input length " + std::to_string(x.size()) +
                           " != p = " + std::to_string(enc.p));
    return enc.omega * x + enc.beta;
}

// rho(theta) = R_y(theta)|0><0|R_y(theta)+
inline DensityMatrix episode_state(double theta) {
    double c = std::cos(theta / 2), s = std::sin(theta / 2);
    DensityMatrix rho;
    rho.m = CMat(2, 2);
    rho.m << c * c, c * s, c * s, s * s;
    return rho;
}

// d rho / d theta, traceless Hermitian.
inline CMat episode_state_derivative(double theta) {
    double c = std::cos(theta), s = std::sin(theta);
    CMat d(2, 2);
    d << -s / 2, c / 2, c / 2, s / 2;
    return d;
}

// Leaf density matrices feeding the tree: one episode per leaf at chi=2,
// consecutive episode pairs (2e, 2e+1) combined by Kronecker product at
// chi=4 (episode 2e owns the significant bit).
inline std::vector<DensityMatrix> leaf_states(const EncodingParams& enc, const RVec& x,
                                              Eigen::Index chi) {
    if (chi != 2 && chi != 4) throw config_error("leaf_states: chi must be 2 or 4");
    const Eigen::Index group = (chi == 2) ? 1 : 2;
    if (enc.E % group != 0)
        throw config_error("leaf_states: E must be divisible by lg(chi)");
    RVec theta = angles(enc, x);
    std::vector<DensityMatrix> leaves;
    leaves.reserve(enc.E / group);
    for (Eigen::Index e = 0; e < enc.E; e += group) {
        DensityMatrix rho = episode_state(theta[e]);
        if (group == 2) {
            DensityMatrix rho2 = episode_state(theta[e + 1]);
            DensityMatrix pair;
            pair.m = kron(rho.m, rho2.m);
            leaves.push_back(std::move(pair));
        } else {
            leaves.push_back(std::move(rho));
        }
    }
    return leaves;
}

// Measure rho in the computational basis: exact probabilities, or empirical
// frequencies over a finite shot budget.
inline RVec sample_outcomes(const DensityMatrix& rho, Shots shots, Rng& rng) {
    const Eigen::Index d = rho.dim();
    RVec probs(d);
    for (Eigen::Index i = 0; i < d; ++i) probs[i] = std::max(0.0, rho.m(i, i).real());
    double total = probs.sum();
    if (total > 0) probs /= total;
    if (shots.is_exact()) return probs;
    std::discrete_distribution<int> dist(probs.data(), probs.data() + d);
    RVec freq = RVec::Zero(d);
    for (std::uint64_t s = 0; s < *shots.n; ++s) freq[dist(rng.engine())] += 1.0;
    return freq / double(*shots.n);
}

}  // namespace qksttn

#pragma once

// Ground-truth reference: simulate the whole circuit on the full 2^E-qubit
// density matrix, applying every node tensor in tree order and deferring all
// discards to one final partial trace. Shares no contraction code with the
// tree path. Capped at E = 12 qubits; refuse rather than degrade.

#include <vector>

#include "qksttn/encoding.hpp"
#include "qksttn/ttn.hpp"

namespace qksttn {
namespace oracle {

inline constexpr Eigen::Index kMaxQubits = 12;

// Apply a two-group unitary U (dim chi^2) to groups (g1, g2) of a full-space
// density matrix rho (dim 2^E), in place: rho <- U_full rho U_full+. Groups
// are big-endian: group 0 owns the most significant bits.
inline void apply_group_unitary(CMat& rho, const CMat& u, Eigen::Index g1,
                                Eigen::Index g2, Eigen::Index n_groups,
                                Eigen::Index bits_per_group) {
    const Eigen::Index dim = rho.rows();
    const Eigen::Index chi = Eigen::Index(1) << bits_per_group;
    const Eigen::Index D = chi * chi;
    const Eigen::Index shift1 = (n_groups - 1 - g1) * bits_per_group;
    const Eigen::Index shift2 = (n_groups - 1 - g2) * bits_per_group;
    const Eigen::Index m1 = (chi - 1) << shift1;
    const Eigen::Index m2 = (chi - 1) << shift2;

    // enumerate base indices with both target groups zeroed
    std::vector<Eigen::Index> bases;
    bases.reserve(dim / D);
    for (Eigen::Index s = 0; s < dim; ++s)
        if ((s & m1) == 0 && (s & m2) == 0) bases.push_back(s);

    auto compose = [&](Eigen::Index base, Eigen::Index a, Eigen::Index b) {
        return base | (a << shift1) | (b << shift2);
    };

    CVec in(D), out(D);
    // left multiply: rows mixed within each (base, column) fiber
    for (Eigen::Index col = 0; col < dim; ++col) {
        for (Eigen::Index base : bases) {
            for (Eigen::Index a = 0; a < chi; ++a)
                for (Eigen::Index b = 0; b < chi; ++b)
                    in[a * chi + b] = rho(compose(base, a, b), col);
            out.noalias() = u * in;
            for (Eigen::Index a = 0; a < chi; ++a)
                for (Eigen::Index b = 0; b < chi; ++b)
                    rho(compose(base, a, b), col) = out[a * chi + b];
        }
    }
    // right multiply by U+: columns mixed, conjugated
    for (Eigen::Index row = 0; row < dim; ++row) {
        for (Eigen::Index base : bases) {
            for (Eigen::Index a = 0; a < chi; ++a)
                for (Eigen::Index b = 0; b < chi; ++b)
                    in[a * chi + b] = rho(row, compose(base, a, b));
            out.noalias() = u.conjugate() * in;
            for (Eigen::Index a = 0; a < chi; ++a)
                for (Eigen::Index b = 0; b < chi; ++b)
                    rho(row, compose(base, a, b)) = out[a * chi + b];
        }
    }
}

// Trace out every qubit except the leading group of `keep_bits` bits.
inline CMat trace_to_leading_group(const CMat& rho, Eigen::Index total_bits,
                                   Eigen::Index keep_bits) {
    const Eigen::Index keep_dim = Eigen::Index(1) << keep_bits;
    const Eigen::Index rest_dim = Eigen::Index(1) << (total_bits - keep_bits);
    CMat out = CMat::Zero(keep_dim, keep_dim);
    for (Eigen::Index i = 0; i < keep_dim; ++i)
        for (Eigen::Index j = 0; j < keep_dim; ++j)
            for (Eigen::Index r = 0; r < rest_dim; ++r)
                out(i, j) += rho(i * rest_dim + r, j * rest_dim + r);
    return out;
}

// Trace out everything except two groups (kept in the order g1, g2).
inline CMat trace_to_group_pair(const CMat& rho, Eigen::Index g1, Eigen::Index g2,
                                Eigen::Index n_groups, Eigen::Index bits_per_group) {
    const Eigen::Index dim = rho.rows();
    const Eigen::Index chi = Eigen::Index(1) << bits_per_group;
    const Eigen::Index shift1 = (n_groups - 1 - g1) * bits_per_group;
    const Eigen::Index shift2 = (n_groups - 1 - g2) * bits_per_group;
    const Eigen::Index m1 = (chi - 1) << shift1;
    const Eigen::Index m2 = (chi - 1) << shift2;
    std::vector<Eigen::Index> bases;
    for (Eigen::Index s = 0; s < dim; ++s)
        if ((s & m1) == 0 && (s & m2) == 0) bases.push_back(s);
    auto compose = [&](Eigen::Index base, Eigen::Index a, Eigen::Index b) {
        return base | (a << shift1) | (b << shift2);
    };
    CMat out = CMat::Zero(chi * chi, chi * chi);
    for (Eigen::Index a = 0; a < chi; ++a)
        for (Eigen::Index b = 0; b < chi; ++b)
            for (Eigen::Index c = 0; c < chi; ++c)
                for (Eigen::Index d = 0; d < chi; ++d)
                    for (Eigen::Index base : bases)
                        out(a * chi + b, c * chi + d) +=
                            rho(compose(base, a, b), compose(base, c, d));
    return out;
}

// Full-space simulation of the encoded circuit for one input vector.
inline DensityMatrix dense_simulate(const EncodingParams& enc, const TTNModel& model,
                                    const RVec& x) {
    if (enc.E > kMaxQubits)
        throw capacity_error("oracle: dense simulation is capped at E = 12 qubits");
    const TreeTopology& t = model.topology;
    const Eigen::Index bits_per_group = ilog2(t.chi);
    if (enc.E != t.leaves * bits_per_group)
        throw domain_error("oracle: encoding episode count does not match topology");
    RVec theta = angles(enc, x);

    // product state over all episode qubits, episode 0 most significant
    CMat full(1, 1);
    full(0, 0) = 1.0;
    for (Eigen::Index e = 0; e < enc.E; ++e)
        full = kron(full, episode_state(theta[e]).m);

    NodeOperators ops = build_operators(model);
    // Tree order: layer by layer. Node (l, i) touches leaf groups
    // (2i * 2^l, (2i+1) * 2^l); the survivor of a subtree is its leftmost
    // group, so group 0 carries the root state at the end.
    for (Eigen::Index l = 0; l < t.layers; ++l) {
        const Eigen::Index stride = Eigen::Index(1) << l;
        for (Eigen::Index i = 0; i < t.nodes_in_layer(l); ++i) {
            const Unitary& u = ops.unitary_for(model, l, i);
            apply_group_unitary(full, u.m, 2 * i * stride, (2 * i + 1) * stride,
                                t.leaves, bits_per_group);
        }
    }
    DensityMatrix root;
    if (model.wide_root()) {
        // the top node pairs group 0 with group leaves/2; keep both
        root.m = trace_to_group_pair(full, 0, t.leaves / 2, t.leaves, bits_per_group);
    } else {
        root.m = trace_to_leading_group(full, enc.E, bits_per_group);
    }
    root.m = 0.5 * (root.m + root.m.adjoint());
    return root;
}

// Class probability through the dense path; its own readout so nothing is
// shared with readout_probs.
inline double dense_class_probability(const DensityMatrix& root, const ReadoutSpec& spec,
                                      int cls) {
    double p = 0;
    if (spec.mode == ReadoutSpec::Mode::BinaryQubit) {
        Eigen::Index qubits = ilog2(root.dim());
        Eigen::Index bit = qubits - 1 - spec.readout_qubit;
        for (Eigen::Index b = 0; b < root.dim(); ++b)
            if (((b >> bit) & 1) == cls) p += root.m(b, b).real();
    } else {
        for (Eigen::Index b = 0; b < root.dim(); ++b)
            if (spec.outcome_to_class[b] == cls) p += root.m(b, b).real();
    }
    return p;
}

// Objective over a labeled batch, computed entirely through dense_simulate.
// Binary: f = mean_0 p(0|x) - mean_1 p(0|x). Multi-class: f = mean over
// classes of the class-conditional mean of p(l|x).
inline double dense_objective(const EncodingParams& enc, const TTNModel& model,
                              const std::vector<RVec>& xs, const std::vector<int>& ys) {
    const int k = model.readout.num_classes();
    std::vector<double> sum(k, 0.0);
    std::vector<Eigen::Index> count(k, 0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        DensityMatrix root = dense_simulate(enc, model, xs[i]);
        int cls = (k == 2) ? 0 : ys[i];
        sum[ys[i]] += dense_class_probability(root, model.readout, cls);
        count[ys[i]] += 1;
    }
    for (int c = 0; c < k; ++c)
        if (count[c] == 0) throw domain_error("dense_objective: class missing from batch");
    if (k == 2) return sum[0] / double(count[0]) - sum[1] / double(count[1]);
    double f = 0;
    for (int c = 0; c < k; ++c) f += sum[c] / double(count[c]);
    return f / double(k);
}

}  // namespace oracle
}  // namespace qksttn

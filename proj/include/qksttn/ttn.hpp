#pragma once

// Dissipative tree tensor network over episode states. Nodes are chi^2 x
// chi^2 unitaries applied to sibling pairs; the first input subsystem
// continues toward the root, the second is traced out. Node (layer, pos)
// consumes positions (2*pos, 2*pos+1) of the previous layer; layer 0 sits on
// the leaves. Parameters live in the traceless-Hermitian generator space, so
// every reconstructed tensor is exactly unitary.

#include <vector>

#include "qksttn/encoding.hpp"
#include "qksttn/qcore.hpp"

namespace qksttn {

struct TreeTopology {
    Eigen::Index chi = 2;
    Eigen::Index leaves = 0;
    Eigen::Index layers = 0;

    Eigen::Index node_count() const { return leaves - 1; }
    Eigen::Index nodes_in_layer(Eigen::Index layer) const {
        return leaves >> (layer + 1);
    }
    Eigen::Index layer_offset(Eigen::Index layer) const {
        return leaves - (leaves >> layer);
    }
    Eigen::Index node_id(Eigen::Index layer, Eigen::Index pos) const {
        return layer_offset(layer) + pos;
    }
    std::pair<Eigen::Index, Eigen::Index> locate(Eigen::Index node) const {
        for (Eigen::Index l = 0; l < layers; ++l)
            if (node < layer_offset(l) + nodes_in_layer(l))
                return {l, node - layer_offset(l)};
        throw domain_error("TreeTopology: node id out of range");
    }
    // Parameter count of one node tensor: chi^4 - 1 (su(chi^2) generators).
    Eigen::Index params_per_node() const { return chi * chi * chi * chi - 1; }
};

inline bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

inline Eigen::Index ilog2(Eigen::Index n) {
    Eigen::Index l = 0;
    while ((Eigen::Index(1) << l) < n) ++l;
    return l;
}

// Balanced binary tree over E / lg(chi) leaves.
inline TreeTopology build_topology(Eigen::Index E, Eigen::Index chi) {
    if (chi != 2 && chi != 4) throw config_error("build_topology: chi must be 2 or 4");
    const Eigen::Index group = (chi == 2) ? 1 : 2;
    if (E % group != 0)
        throw config_error("build_topology: E must be divisible by lg(chi)");
    Eigen::Index leaves = E / group;
    if (!is_power_of_two(leaves) || leaves < 2)
        throw config_error("build_topology: leaf count " + std::to_string(leaves) +
                           " is not a power of 2 (>= 2)");
    return TreeTopology{chi, leaves, ilog2(leaves)};
}

struct ReadoutSpec {
    enum class Mode { BinaryQubit, OutcomeMap };
    Mode mode = Mode::BinaryQubit;
    Eigen::Index readout_qubit = 0;      // BinaryQubit: qubit 0 is the MSB
    std::vector<int> outcome_to_class;   // OutcomeMap: length chi

    static ReadoutSpec binary_qubit(Eigen::Index qubit = 0) {
        ReadoutSpec s;
        s.mode = Mode::BinaryQubit;
        s.readout_qubit = qubit;
        return s;
    }
    static ReadoutSpec outcome_map(std::vector<int> map) {
        ReadoutSpec s;
        s.mode = Mode::OutcomeMap;
        s.outcome_to_class = std::move(map);
        return s;
    }
    // Distribute `outcomes` root outcomes over `classes` labels as evenly as
    // possible, extras to the smallest labels. For 16 outcomes and 10
    // classes this is the 12-to-6 plus 4-to-4 split: classes 0..5 take
    // outcome pairs {2c, 2c+1}, classes 6..9 take single outcomes {12..15}.
    static ReadoutSpec direct_map(int outcomes, int classes) {
        if (classes < 1 || classes > outcomes)
            throw config_error("direct_map: need 1 <= classes <= outcomes");
        std::vector<int> map(outcomes);
        int base = outcomes / classes, extra = outcomes % classes;
        int o = 0;
        for (int c = 0; c < classes; ++c)
            for (int k = 0; k < base + (c < extra ? 1 : 0); ++k) map[o++] = c;
        return outcome_map(std::move(map));
    }
    static ReadoutSpec mnist_16_to_10() { return direct_map(16, 10); }

    int num_classes() const {
        if (mode == Mode::BinaryQubit) return 2;
        int maxc = -1;
        for (int c : outcome_to_class) maxc = std::max(maxc, c);
        return maxc + 1;
    }

    // Outcome maps of length chi read the traced root; maps of length chi^2
    // read the full (untraced) output of the top node.
    bool wide_root(Eigen::Index chi) const {
        return mode == Mode::OutcomeMap &&
               Eigen::Index(outcome_to_class.size()) == chi * chi;
    }
    // Dimension of the state this readout measures, for bond dimension chi.
    Eigen::Index root_dim(Eigen::Index chi) const {
        return wide_root(chi) ? chi * chi : chi;
    }

    // Consistency with a tree of bond dimension chi.
    void validate(Eigen::Index chi) const {
        if (mode == Mode::BinaryQubit) {
            Eigen::Index qubits = ilog2(chi);
            if (readout_qubit < 0 || readout_qubit >= qubits)
                throw config_error("ReadoutSpec: readout qubit out of range for chi");
            return;
        }
        Eigen::Index len = Eigen::Index(outcome_to_class.size());
        if (len != chi && len != chi * chi)
            throw config_error("ReadoutSpec: outcome map length must be chi or chi^2");
        int k = num_classes();
        if (k < 1) throw config_error("ReadoutSpec: empty outcome map");
        std::vector<bool> seen(k, false);
        for (int c : outcome_to_class) {
            if (c < 0) throw config_error("ReadoutSpec: negative class in outcome map");
            seen[c] = true;
        }
        for (int c = 0; c < k; ++c)
            if (!seen[c])
                throw config_error("ReadoutSpec: outcome map not surjective onto classes");
    }

    // Diagonal projector whose expectation is the class probability.
    CMat class_projector(Eigen::Index chi, int cls) const {
        CMat p = CMat::Zero(chi, chi);
        if (mode == Mode::BinaryQubit) {
            Eigen::Index qubits = ilog2(chi);
            Eigen::Index bit = qubits - 1 - readout_qubit;  // MSB-first
            for (Eigen::Index b = 0; b < chi; ++b)
                if (((b >> bit) & 1) == cls) p(b, b) = 1.0;
        } else {
            for (Eigen::Index b = 0; b < chi; ++b)
                if (outcome_to_class[b] == cls) p(b, b) = 1.0;
        }
        return p;
    }
};

struct TTNModel {
    TreeTopology topology;
    std::vector<RVec> params;  // per node (untied) or per layer (tied)
    bool tied = false;
    ReadoutSpec readout;

    Eigen::Index param_vector_count() const {
        return tied ? topology.layers : topology.node_count();
    }
    const RVec& params_for(Eigen::Index layer, Eigen::Index pos) const {
        return tied ? params[layer] : params[topology.node_id(layer, pos)];
    }
    Eigen::Index param_index_for(Eigen::Index layer, Eigen::Index pos) const {
        return tied ? layer : topology.node_id(layer, pos);
    }
    bool wide_root() const { return readout.wide_root(topology.chi); }
};

// Draw each parameter vector from the CUE: H = log of a Haar unitary,
// expressed in the generator basis.
inline TTNModel init_ttn(const TreeTopology& topology, bool tied, Rng& rng,
                         ReadoutSpec readout = ReadoutSpec::binary_qubit()) {
    readout.validate(topology.chi);
    TTNModel model;
    model.topology = topology;
    model.tied = tied;
    model.readout = readout;
    Eigen::Index n = tied ? topology.layers : topology.node_count();
    model.params.reserve(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Unitary u = sample_cue(topology.chi * topology.chi, rng);
        model.params.push_back(params_from_herm(principal_log_unitary(u)));
    }
    return model;
}

// Node tensors reconstructed from parameters. The Hermitian eigensystem is
// kept because the gradient pass reuses it for the exp-map derivative.
struct NodeOperators {
    std::vector<HermEig> eig;  // indexed like model.params
    std::vector<Unitary> u;

    const Unitary& unitary_for(const TTNModel& m, Eigen::Index layer,
                               Eigen::Index pos) const {
        return u[m.param_index_for(layer, pos)];
    }
};

inline NodeOperators build_operators(const TTNModel& model) {
    NodeOperators ops;
    const Eigen::Index d = model.topology.chi * model.topology.chi;
    ops.eig.reserve(model.params.size());
    ops.u.reserve(model.params.size());
    for (const RVec& v : model.params) {
        ops.eig.push_back(eig_hermitian(herm_from_params(v, d)));
        ops.u.push_back(expm_from_eig(ops.eig.back()));
    }
    return ops;
}

// Forward contraction with every intermediate state retained:
// states[0] = leaves, states[l+1] = outputs of layer l, states[layers][0] = root.
struct ContractionTrace {
    std::vector<std::vector<DensityMatrix>> states;

    const DensityMatrix& root() const { return states.back()[0]; }
};

inline ContractionTrace contract_traced(const TTNModel& model, const NodeOperators& ops,
                                        const std::vector<DensityMatrix>& leaves) {
    const TreeTopology& t = model.topology;
    if (Eigen::Index(leaves.size()) != t.leaves)
        throw domain_error("contract: leaf count " + std::to_string(leaves.size()) +
                           " != topology leaves " + std::to_string(t.leaves));
    ContractionTrace trace;
    trace.states.resize(t.layers + 1);
    trace.states[0] = leaves;
    const bool wide = model.wide_root();
    for (Eigen::Index l = 0; l < t.layers; ++l) {
        const auto& in = trace.states[l];
        auto& out = trace.states[l + 1];
        out.reserve(in.size() / 2);
        for (Eigen::Index i = 0; i < Eigen::Index(in.size()) / 2; ++i) {
            const Unitary& u = ops.unitary_for(model, l, i);
            if (wide && l == t.layers - 1)
                out.push_back(apply_node_wide(u, in[2 * i], in[2 * i + 1]));
            else
                out.push_back(apply_node(u, in[2 * i], in[2 * i + 1]));
        }
    }
    return trace;
}

inline DensityMatrix contract(const TTNModel& model, const std::vector<DensityMatrix>& leaves) {
    NodeOperators ops = build_operators(model);
    return contract_traced(model, ops, leaves).root();
}

// Per-class probabilities from the root state.
inline RVec readout_probs(const DensityMatrix& root, const ReadoutSpec& spec) {
    if (spec.mode == ReadoutSpec::Mode::OutcomeMap) {
        if (Eigen::Index(spec.outcome_to_class.size()) != root.dim())
            throw config_error("readout_probs: outcome map length " +
                               std::to_string(spec.outcome_to_class.size()) +
                               " does not match the root dimension " +
                               std::to_string(root.dim()));
    }
    spec.validate(root.dim());
    int k = spec.num_classes();
    RVec probs(k);
    for (int c = 0; c < k; ++c)
        probs[c] = (spec.class_projector(root.dim(), c) * root.m).trace().real();
    return probs;
}

// ---------------------------------------------------------------------------
// Adjoint (reverse) pass. For a scalar p = tr[P rho_root], the adjoint of a
// state rho is the Hermitian G with dp = tr[G d(rho)]. Descending through a
// node with unitary U and sibling inputs (rhoA, rhoB):
//   K        = U+ (G_out (x) I) U
//   G_A[a,c] = sum_{b,d} K[(a,b),(c,d)] rhoB[d,b]
//   G_B[b,d] = sum_{a,c} K[(a,b),(c,d)] rhoA[c,a]
// The same contraction splits a chi=4 leaf adjoint into its two episode
// adjoints (with K = G_leaf directly).
// ---------------------------------------------------------------------------

inline CMat adjoint_first(const CMat& k, const CMat& rhoB) {
    const Eigen::Index chi = rhoB.rows();
    CMat g = CMat::Zero(chi, chi);
    for (Eigen::Index a = 0; a < chi; ++a)
        for (Eigen::Index c = 0; c < chi; ++c) {
            cxd acc = 0;
            for (Eigen::Index b = 0; b < chi; ++b)
                for (Eigen::Index d = 0; d < chi; ++d)
                    acc += k(a * chi + b, c * chi + d) * rhoB(d, b);
            g(a, c) = acc;
        }
    return 0.5 * (g + g.adjoint());
}

inline CMat adjoint_second(const CMat& k, const CMat& rhoA) {
    const Eigen::Index chi = rhoA.rows();
    CMat g = CMat::Zero(chi, chi);
    for (Eigen::Index b = 0; b < chi; ++b)
        for (Eigen::Index d = 0; d < chi; ++d) {
            cxd acc = 0;
            for (Eigen::Index a = 0; a < chi; ++a)
                for (Eigen::Index c = 0; c < chi; ++c)
                    acc += k(a * chi + b, c * chi + d) * rhoA(c, a);
            g(b, d) = acc;
        }
    return 0.5 * (g + g.adjoint());
}

struct Adjoints {
    std::vector<CMat> node_down;  // per node id: adjoint of the node OUTPUT
    std::vector<CMat> leaf;       // per leaf: adjoint of the leaf state
};

// Reverse sweep seeded with the root operator (a readout projector).
inline Adjoints backward(const TTNModel& model, const NodeOperators& ops,
                         const ContractionTrace& trace, const CMat& root_op) {
    const TreeTopology& t = model.topology;
    Adjoints adj;
    adj.node_down.resize(t.node_count());
    adj.leaf.resize(t.leaves);
    adj.node_down[t.node_id(t.layers - 1, 0)] = root_op;
    const bool wide = model.wide_root();
    for (Eigen::Index l = t.layers - 1; l >= 0; --l) {
        for (Eigen::Index i = 0; i < t.nodes_in_layer(l); ++i) {
            const CMat& g_out = adj.node_down[t.node_id(l, i)];
            const Unitary& u = ops.unitary_for(model, l, i);
            const Eigen::Index chi = t.chi;
            CMat w_ext;
            if (wide && l == t.layers - 1) {
                w_ext = g_out;  // adjoint of the full, untraced node output
            } else {
                w_ext = CMat::Zero(chi * chi, chi * chi);
                for (Eigen::Index a = 0; a < chi; ++a)
                    for (Eigen::Index c = 0; c < chi; ++c)
                        for (Eigen::Index b = 0; b < chi; ++b)
                            w_ext(a * chi + b, c * chi + b) = g_out(a, c);
            }
            CMat k = u.m.adjoint() * w_ext * u.m;
            const DensityMatrix& rhoA = trace.states[l][2 * i];
            const DensityMatrix& rhoB = trace.states[l][2 * i + 1];
            CMat g_a = adjoint_first(k, rhoB.m);
            CMat g_b = adjoint_second(k, rhoA.m);
            if (l == 0) {
                adj.leaf[2 * i] = std::move(g_a);
                adj.leaf[2 * i + 1] = std::move(g_b);
            } else {
                adj.node_down[t.node_id(l - 1, 2 * i)] = std::move(g_a);
                adj.node_down[t.node_id(l - 1, 2 * i + 1)] = std::move(g_b);
            }
        }
    }
    return adj;
}

// Environment of one node for one example and one class projector: the
// Hermitian form M with p(class) = vec(U)+ M vec(U), where vec flattens U
// row-major and M[(b,d),(a,c)] = (W (x) I)[b,a] * (rhoA (x) rhoB)[c,d].
// Everything except the node's own tensor is folded into M.
inline CMat environment(const TTNModel& model, const std::vector<DensityMatrix>& leaves,
                        Eigen::Index node, int class_label) {
    const TreeTopology& t = model.topology;
    auto [layer, pos] = t.locate(node);
    NodeOperators ops = build_operators(model);
    ContractionTrace trace = contract_traced(model, ops, leaves);
    CMat proj = model.readout.class_projector(model.readout.root_dim(t.chi), class_label);
    Adjoints adj = backward(model, ops, trace, proj);
    const CMat& w = adj.node_down[node];
    const CMat& rhoA = trace.states[layer][2 * pos].m;
    const CMat& rhoB = trace.states[layer][2 * pos + 1].m;
    const Eigen::Index chi = t.chi, D = chi * chi;
    CMat r = kron(rhoA, rhoB);
    CMat w_ext;
    if (model.wide_root() && layer == t.layers - 1) {
        w_ext = w;
    } else {
        w_ext = CMat::Zero(D, D);
        for (Eigen::Index a = 0; a < chi; ++a)
            for (Eigen::Index c = 0; c < chi; ++c)
                for (Eigen::Index b = 0; b < chi; ++b)
                    w_ext(a * chi + b, c * chi + b) = w(a, c);
    }
    CMat env(D * D, D * D);
    for (Eigen::Index b = 0; b < D; ++b)
        for (Eigen::Index d = 0; d < D; ++d)
            for (Eigen::Index a = 0; a < D; ++a)
                for (Eigen::Index c = 0; c < D; ++c)
                    env(b * D + d, a * D + c) = w_ext(b, a) * r(c, d);
    return env;
}

// Objective value of one node against an environment: vec(U)+ M vec(U).
inline double environment_value(const CMat& env, const Unitary& u) {
    const Eigen::Index D = u.dim();
    CVec vec(D * D);
    for (Eigen::Index a = 0; a < D; ++a)
        for (Eigen::Index c = 0; c < D; ++c) vec[a * D + c] = u.m(a, c);
    return (vec.adjoint() * env * vec)(0, 0).real();
}

}  // namespace qksttn

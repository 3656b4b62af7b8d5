#pragma once

// Objectives, exact gradients and the two training regimes: global Adam /
// AdamW-with-warm-restarts updates over all parameters, and sequential
// conjugate-gradient sweeps that optimize one node (or one episode) at a
// time against its batch-summed environment.
//
// The training objective is f with
//   binary:      f = mean_{class 0} p(0|x) - mean_{class 1} p(0|x),
//                Pr(error) = 1/2 - f/2
//   multi-class: f = (1/|L|) sum_l mean_{class l} p(l|x),
//                Pr(error) = 1 - f
// and all optimizers ASCEND f. Gradients are analytic reverse accumulation
// through the contraction and through U = exp(iH) (eigenbasis divided
// differences), validated against central finite differences in the tests.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "qksttn/encoding.hpp"
#include "qksttn/ttn.hpp"

namespace qksttn {

struct Batch {
    std::vector<RVec> xs;
    std::vector<int> ys;

    std::size_t size() const { return xs.size(); }
};

enum class Optimizer { Adam, AdamWRestarts, CgSweeps };

struct TrainConfig {
    Eigen::Index batch_size = 32;
    int epochs = 40;
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 1e-3;
    double weight_decay = 4e-4;   // decoupled, AdamWRestarts only
    double restart_t0 = 1.0;      // cosine annealing with warm restarts
    double restart_t_mult = 2.0;
    int restarts = 5;
    double cg_tol = 1e-5;
    int cg_max_iters_ttn = 100;
    int cg_max_iters_features = 5;
    int sweeps = 10;              // CgSweeps only
    bool feature_optimization = true;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0 = hardware concurrency

    void validate() const {
        if (batch_size < 1) throw config_error("TrainConfig: batch-size must be >= 1");
        if (epochs < 1) throw config_error("TrainConfig: epochs must be >= 1");
        if (!(learning_rate > 0)) throw config_error("TrainConfig: learning-rate must be positive");
        if (weight_decay < 0) throw config_error("TrainConfig: weight-decay must be >= 0");
    }
};

struct GradientBundle {
    std::vector<RVec> ttn;  // mirrors TTNModel::params (per node or per layer)
    RMat d_omega;           // E x p; exactly zero on masked coordinates
    RVec d_beta;            // E

    static GradientBundle zeros_like(const TTNModel& model, const EncodingParams& enc) {
        GradientBundle g;
        g.ttn.assign(model.param_vector_count(),
                     RVec::Zero(model.topology.params_per_node()));
        g.d_omega = RMat::Zero(enc.E, enc.p);
        g.d_beta = RVec::Zero(enc.E);
        return g;
    }
};

namespace detail {

// Per-example aggregation weight and root projector class for the batch
// objective. Binary uses the class-0 projector for every example with a
// signed weight; multi-class uses each example's own class projector.
inline void class_counts(const Batch& batch, int num_classes, std::vector<Eigen::Index>& n) {
    n.assign(num_classes, 0);
    for (int y : batch.ys) {
        if (y < 0 || y >= num_classes)
            throw domain_error("batch label " + std::to_string(y) +
                               " outside the model's class set");
        n[y] += 1;
    }
    for (int c = 0; c < num_classes; ++c)
        if (n[c] == 0)
            throw domain_error("batch is missing class " + std::to_string(c) +
                               "; the class-conditional objective needs every class");
}

inline std::pair<int, double> seed_for_example(int y, int num_classes,
                                               const std::vector<Eigen::Index>& counts) {
    if (num_classes == 2) {
        double w = (y == 0) ? 1.0 / double(counts[0]) : -1.0 / double(counts[1]);
        return {0, w};
    }
    return {y, 1.0 / (double(num_classes) * double(counts[y]))};
}

// Divided-difference table of g(x) = exp(ix) on the eigenvalues, the kernel
// of the derivative of the matrix exponential in its eigenbasis.
inline CMat phase_divided_differences(const RVec& evals) {
    const Eigen::Index d = evals.size();
    CMat dd(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = 0; k < d; ++k) {
            double diff = evals[j] - evals[k];
            if (std::abs(diff) < 1e-9) {
                dd(j, k) = cxd(0, 1) * std::polar(1.0, 0.5 * (evals[j] + evals[k]));
            } else {
                dd(j, k) = (std::polar(1.0, evals[j]) - std::polar(1.0, evals[k])) / diff;
            }
        }
    return dd;
}

// Given the batch-summed Y = sum_i w_i (W_i (x) I) U R_i for one node (so
// that df = 2 Re tr(dU+ Y)), project onto the generator coordinates through
// the eigenbasis of H.
inline RVec project_gradient(const CMat& y, const HermEig& eig) {
    CMat dd = phase_divided_differences(eig.evals);
    CMat y_tilde = eig.evecs.adjoint() * y * eig.evecs;
    CMat z = eig.evecs * y_tilde.cwiseProduct(dd.conjugate()) * eig.evecs.adjoint();
    return 2.0 * params_from_herm(z + z.adjoint());
}

inline CMat extend_first(const CMat& w, Eigen::Index chi) {
    CMat ext = CMat::Zero(chi * chi, chi * chi);
    for (Eigen::Index a = 0; a < chi; ++a)
        for (Eigen::Index c = 0; c < chi; ++c)
            for (Eigen::Index b = 0; b < chi; ++b)
                ext(a * chi + b, c * chi + b) = w(a, c);
    return ext;
}

struct ExamplePass {
    double p = 0;                   // probability of the seeded class
    std::vector<CMat> node_y;       // per node id: (W (x) I) U R, unweighted
    std::vector<double> episode_s;  // per episode: tr(V_e drho/dtheta)
};

// One forward + reverse pass. Fills only what the caller asks for.
inline ExamplePass example_pass(const TTNModel& model, const NodeOperators& ops,
                                const EncodingParams& enc, const RVec& x, int proj_class,
                                bool want_ttn, bool want_features) {
    const TreeTopology& t = model.topology;
    ExamplePass out;
    std::vector<DensityMatrix> leaves = leaf_states(enc, x, t.chi);
    ContractionTrace trace = contract_traced(model, ops, leaves);
    CMat proj = model.readout.class_projector(model.readout.root_dim(t.chi), proj_class);
    out.p = (proj * trace.root().m).trace().real();
    if (!want_ttn && !want_features) return out;

    Adjoints adj = backward(model, ops, trace, proj);
    if (want_ttn) {
        out.node_y.resize(t.node_count());
        for (Eigen::Index l = 0; l < t.layers; ++l)
            for (Eigen::Index i = 0; i < t.nodes_in_layer(l); ++i) {
                Eigen::Index node = t.node_id(l, i);
                const CMat& w = adj.node_down[node];
                CMat r = kron(trace.states[l][2 * i].m, trace.states[l][2 * i + 1].m);
                CMat w_ext = (model.wide_root() && l == t.layers - 1)
                                 ? w
                                 : extend_first(w, t.chi);
                out.node_y[node] = w_ext * ops.unitary_for(model, l, i).m * r;
            }
    }
    if (want_features) {
        RVec theta = angles(enc, x);
        out.episode_s.resize(enc.E);
        const Eigen::Index group = (t.chi == 2) ? 1 : 2;
        for (Eigen::Index leaf = 0; leaf < t.leaves; ++leaf) {
            if (group == 1) {
                out.episode_s[leaf] =
                    (adj.leaf[leaf] * episode_state_derivative(theta[leaf])).trace().real();
            } else {
                Eigen::Index e0 = 2 * leaf, e1 = 2 * leaf + 1;
                CMat v0 = adjoint_first(adj.leaf[leaf], episode_state(theta[e1]).m);
                CMat v1 = adjoint_second(adj.leaf[leaf], episode_state(theta[e0]).m);
                out.episode_s[e0] = (v0 * episode_state_derivative(theta[e0])).trace().real();
                out.episode_s[e1] = (v1 * episode_state_derivative(theta[e1])).trace().real();
            }
        }
    }
    return out;
}

}  // namespace detail

struct BatchEval {
    double f = 0;
    double pr_error = 0;
    GradientBundle grad;
};

// Shared batch evaluation: objective and, on request, exact gradients with
// respect to the node tensors and/or the encoding. Examples are processed in
// parallel; accumulation order is fixed by example index, so results do not
// depend on the thread count.
inline BatchEval evaluate_batch(const TTNModel& model, const EncodingParams& enc,
                                const Batch& batch, bool want_ttn, bool want_features,
                                unsigned threads = 0) {
    const int k = model.readout.num_classes();
    std::vector<Eigen::Index> counts;
    detail::class_counts(batch, k, counts);
    NodeOperators ops = build_operators(model);
    const std::size_t n = batch.size();

    std::vector<detail::ExamplePass> passes(n);
    parallel_for(n, [&](std::size_t i) {
        auto [cls, w] = detail::seed_for_example(batch.ys[i], k, counts);
        (void)w;
        passes[i] = detail::example_pass(model, ops, enc, batch.xs[i], cls, want_ttn,
                                         want_features);
    }, threads);

    BatchEval out;
    out.grad = GradientBundle::zeros_like(model, enc);
    const TreeTopology& t = model.topology;
    const Eigen::Index D = t.chi * t.chi;
    std::vector<CMat> y_sum;
    if (want_ttn) y_sum.assign(model.param_vector_count(), CMat::Zero(D, D));
    RVec s_weighted = RVec::Zero(enc.E);

    double f = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto [cls, w] = detail::seed_for_example(batch.ys[i], k, counts);
        (void)cls;
        f += w * passes[i].p;
        if (want_ttn)
            for (Eigen::Index l = 0; l < t.layers; ++l)
                for (Eigen::Index pos = 0; pos < t.nodes_in_layer(l); ++pos) {
                    Eigen::Index node = t.node_id(l, pos);
                    y_sum[model.param_index_for(l, pos)] += w * passes[i].node_y[node];
                }
        if (want_features) {
            for (Eigen::Index e = 0; e < enc.E; ++e)
                s_weighted[e] = w * passes[i].episode_s[e];
            out.grad.d_omega += s_weighted * batch.xs[i].transpose();
            out.grad.d_beta += s_weighted;
        }
    }
    out.f = f;
    out.pr_error = (k == 2) ? 0.5 - 0.5 * f : 1.0 - f;

    if (want_ttn)
        for (std::size_t j = 0; j < y_sum.size(); ++j)
            out.grad.ttn[j] = detail::project_gradient(y_sum[j], ops.eig[j]);
    if (want_features)
        for (Eigen::Index e = 0; e < enc.E; ++e)
            for (Eigen::Index i = 0; i < enc.p; ++i)
                if (!enc.mask(e, i)) out.grad.d_omega(e, i) = 0.0;
    return out;
}

inline std::pair<double, double> objective_batch(const TTNModel& model,
                                                 const EncodingParams& enc,
                                                 const Batch& batch,
                                                 unsigned threads = 0) {
    BatchEval ev = evaluate_batch(model, enc, batch, false, false, threads);
    return {ev.f, ev.pr_error};
}

inline GradientBundle grad_ttn(const TTNModel& model, const EncodingParams& enc,
                               const Batch& batch, unsigned threads = 0) {
    return evaluate_batch(model, enc, batch, true, false, threads).grad;
}

inline GradientBundle grad_features(const TTNModel& model, const EncodingParams& enc,
                                    const Batch& batch, unsigned threads = 0) {
    return evaluate_batch(model, enc, batch, false, true, threads).grad;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<RVec> m_ttn, v_ttn;
    RMat m_omega, v_omega;
    RVec m_beta, v_beta;
    long step = 0;

    static AdamState zeros_like(const TTNModel& model, const EncodingParams& enc) {
        AdamState s;
        s.m_ttn.assign(model.param_vector_count(),
                       RVec::Zero(model.topology.params_per_node()));
        s.v_ttn = s.m_ttn;
        s.m_omega = RMat::Zero(enc.E, enc.p);
        s.v_omega = s.m_omega;
        s.m_beta = RVec::Zero(enc.E);
        s.v_beta = s.m_beta;
        return s;
    }
};

namespace detail {

template <typename Arr>
void adam_axis(Arr& p, const Arr& g, Arr& m, Arr& v, long step, double lr,
               const AdamHyper& h) {
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g.cwiseProduct(g);
    double c1 = 1 - std::pow(h.beta1, double(step));
    double c2 = 1 - std::pow(h.beta2, double(step));
    Arr m_hat = m / c1, v_hat = v / c2;
    p += lr * (m_hat.array() / (v_hat.array().sqrt() + h.eps)).matrix();
}

}  // namespace detail

// One Adam ascent step on f over all trainable containers. Shapes must
// mirror the parameter containers exactly.
inline void adam_step(TTNModel& model, EncodingParams& enc, const GradientBundle& g,
                      AdamState& state, double lr, const AdamHyper& hyper = {}) {
    if (g.ttn.size() != model.params.size() || g.d_omega.rows() != enc.E ||
        g.d_omega.cols() != enc.p || g.d_beta.size() != enc.E)
        throw shape_error("adam_step: gradient shapes do not match parameters");
    state.step += 1;
    for (std::size_t j = 0; j < model.params.size(); ++j)
        detail::adam_axis(model.params[j], g.ttn[j], state.m_ttn[j], state.v_ttn[j],
                          state.step, lr, hyper);
    detail::adam_axis(enc.omega, g.d_omega, state.m_omega, state.v_omega, state.step,
                      lr, hyper);
    detail::adam_axis(enc.beta, g.d_beta, state.m_beta, state.v_beta, state.step, lr,
                      hyper);
    enc.enforce_mask();
}

// Cosine annealing factor with warm restarts: eta = (1 + cos(pi t/T_i)) / 2,
// cycle lengths T0, T0*Tmult, T0*Tmult^2, ... (restart boundaries at
// cumulative epochs 1, 3, 7, 15, 31 for T0=1, Tmult=2).
struct CosineRestartSchedule {
    double t0 = 1.0;
    double t_mult = 2.0;

    static double cosine(double t_cur, double ti) {
        return 0.5 * (1.0 + std::cos(M_PI * t_cur / ti));
    }

    double factor(double t) const {
        double ti = t0, start = 0.0;
        while (t >= start + ti) {
            start += ti;
            ti *= t_mult;
        }
        return cosine(t - start, ti);
    }
};

// AdamW with decoupled weight decay; the cosine factor scales both the
// learning rate and the decay.
inline void adamw_restarts_step(TTNModel& model, EncodingParams& enc,
                                const GradientBundle& g, AdamState& state,
                                double base_lr, double base_decay,
                                const CosineRestartSchedule& schedule, double t_epochs,
                                const AdamHyper& hyper = {}) {
    double eta = schedule.factor(t_epochs);
    double decay = eta * base_decay;
    for (auto& v : model.params) v *= (1.0 - decay);
    enc.omega *= (1.0 - decay);
    enc.beta *= (1.0 - decay);
    adam_step(model, enc, g, state, eta * base_lr, hyper);
}

// ---------------------------------------------------------------------------
// Nonlinear conjugate gradient (Polak-Ribiere+ with Armijo backtracking),
// used by the sequential sweeps. Maximizes f; never accepts a decrease.
// ---------------------------------------------------------------------------

struct CgOptions {
    double tol = 1e-5;
    int max_iters = 100;
};

template <typename FnVal, typename FnGrad>
double cg_maximize(RVec& x, FnVal&& value, FnGrad&& gradient, const CgOptions& opt) {
    double f = value(x);
    RVec g = gradient(x);
    RVec d = g;
    double alpha = 1.0;
    for (int it = 0; it < opt.max_iters; ++it) {
        if (g.cwiseAbs().maxCoeff() <= opt.tol) break;
        double slope = g.dot(d);
        if (slope <= 0) {  // restart along the gradient
            d = g;
            slope = g.dot(d);
            if (slope <= 0) break;
        }
        double step = alpha;
        double f_new = f;
        RVec x_new = x;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = x + step * d;
            f_new = value(x_new);
            if (f_new >= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        alpha = std::min(1.0, step * 2);  // warm start the next search
        RVec g_new = gradient(x_new);
        double beta = g_new.dot(g_new - g) / g.dot(g);
        beta = std::max(0.0, beta);
        d = g_new + beta * d;
        x = x_new;
        f = f_new;
        g = g_new;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct MetricsEntry {
    int epoch = 0;  // or sweep index for CG training
    double train_f = 0;
    double train_pr_error = 0;
    double val_error = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    TTNModel model;
    EncodingParams enc;
    std::vector<MetricsEntry> history;
    bool diverged = false;
    std::string diagnostic;
};

using EpochCallback = std::function<void(const MetricsEntry&)>;

// Reports the batch objective around each sequential node update.
struct NodeUpdate {
    int sweep = 0;
    Eigen::Index node = 0;
    double f_before = 0;
    double f_after = 0;
};
using NodeUpdateCallback = std::function<void(const NodeUpdate&)>;

namespace detail {

// Class-stratified batch sampler: per-class pools reshuffled on exhaustion,
// equal per-class counts per batch.
class StratifiedSampler {
  public:
    StratifiedSampler(const std::vector<int>& ys, int num_classes, Rng rng)
        : rng_(std::move(rng)), pools_(num_classes), cursors_(num_classes, 0) {
        for (std::size_t i = 0; i < ys.size(); ++i) pools_[ys[i]].push_back(i);
        for (auto& pool : pools_) {
            if (pool.empty())
                throw domain_error("training set is missing one of the classes");
            shuffle_vec(pool, rng_.engine());
        }
    }

    std::vector<std::size_t> draw(Eigen::Index batch_size) {
        const int k = int(pools_.size());
        Eigen::Index per_class = std::max<Eigen::Index>(1, batch_size / k);
        std::vector<std::size_t> out;
        out.reserve(per_class * k);
        for (int c = 0; c < k; ++c)
            for (Eigen::Index j = 0; j < per_class; ++j) {
                if (cursors_[c] >= pools_[c].size()) {
                    shuffle_vec(pools_[c], rng_.engine());
                    cursors_[c] = 0;
                }
                out.push_back(pools_[c][cursors_[c]++]);
            }
        return out;
    }

  private:
    Rng rng_;
    std::vector<std::vector<std::size_t>> pools_;
    std::vector<std::size_t> cursors_;
};

inline Batch gather(const std::vector<RVec>& xs, const std::vector<int>& ys,
                    const std::vector<std::size_t>& idx) {
    Batch b;
    b.xs.reserve(idx.size());
    b.ys.reserve(idx.size());
    for (std::size_t i : idx) {
        b.xs.push_back(xs[i]);
        b.ys.push_back(ys[i]);
    }
    return b;
}

}  // namespace detail

// Deterministic classification error of the maximum-probability readout.
inline double classification_error(const TTNModel& model, const EncodingParams& enc,
                                   const std::vector<RVec>& xs, const std::vector<int>& ys,
                                   unsigned threads = 0) {
    NodeOperators ops = build_operators(model);
    std::vector<int> pred(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) {
        DensityMatrix root =
            contract_traced(model, ops, leaf_states(enc, xs[i], model.topology.chi)).root();
        RVec probs = readout_probs(root, model.readout);
        Eigen::Index best = 0;
        probs.maxCoeff(&best);
        pred[i] = int(best);
    }, threads);
    double wrong = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) wrong += (pred[i] != ys[i]) ? 1 : 0;
    return wrong / double(xs.size());
}

// Global gradient training (Adam or AdamW with warm restarts), per the
// stochastic minibatch regime. Feature optimization toggles whether the
// encoding parameters receive gradients alongside the node tensors.
inline TrainResult train_global(TTNModel model, EncodingParams enc,
                                const std::vector<RVec>& xs, const std::vector<int>& ys,
                                const TrainConfig& config,
                                const std::vector<RVec>* val_xs = nullptr,
                                const std::vector<int>* val_ys = nullptr,
                                const EpochCallback& on_epoch = {}) {
    config.validate();
    if (xs.empty()) throw config_error("train_global: empty dataset");
    if (config.optimizer == Optimizer::CgSweeps)
        throw config_error("train_global handles Adam-family optimizers; use train_sweeps");
    const int k = model.readout.num_classes();
    detail::StratifiedSampler sampler(ys, k, Rng(derive_seed(config.seed, 0xBA7C4)));
    CosineRestartSchedule schedule{config.restart_t0, config.restart_t_mult};
    AdamState state = AdamState::zeros_like(model, enc);
    TrainResult result;
    const Eigen::Index steps_per_epoch =
        std::max<Eigen::Index>(1, Eigen::Index(xs.size()) / config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double f_acc = 0, pr_acc = 0;
        for (Eigen::Index step = 0; step < steps_per_epoch; ++step) {
            Batch batch = detail::gather(xs, ys, sampler.draw(config.batch_size));
            BatchEval ev = evaluate_batch(model, enc, batch, true,
                                          config.feature_optimization, config.threads);
            if (!std::isfinite(ev.f)) {
                result.model = std::move(model);
                result.enc = std::move(enc);
                result.diverged = true;
                result.diagnostic = "non-finite objective at epoch " +
                                    std::to_string(epoch) + ", step " +
                                    std::to_string(step);
                return result;
            }
            if (!config.feature_optimization) {
                ev.grad.d_omega.setZero();
                ev.grad.d_beta.setZero();
            }
            if (config.optimizer == Optimizer::AdamWRestarts) {
                double t = double(epoch) + double(step) / double(steps_per_epoch);
                adamw_restarts_step(model, enc, ev.grad, state, config.learning_rate,
                                    config.weight_decay, schedule, t);
            } else {
                adam_step(model, enc, ev.grad, state, config.learning_rate);
            }
            f_acc += ev.f;
            pr_acc += ev.pr_error;
        }
        MetricsEntry entry;
        entry.epoch = epoch;
        entry.train_f = f_acc / double(steps_per_epoch);
        entry.train_pr_error = pr_acc / double(steps_per_epoch);
        if (val_xs && val_ys)
            entry.val_error = classification_error(model, enc, *val_xs, *val_ys,
                                                   config.threads);
        result.history.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    result.model = std::move(model);
    result.enc = std::move(enc);
    return result;
}

namespace detail {

// Batch-summed environment of one node: M = sum_i w_i kron(W_i (x) I, R_i^T),
// so the batch objective restricted to that node is vec(U)+ M vec(U).
inline CMat node_environment_sum(const TTNModel& model, const NodeOperators& ops,
                                 const EncodingParams& enc, const Batch& batch,
                                 Eigen::Index node, unsigned threads) {
    const TreeTopology& t = model.topology;
    const int k = model.readout.num_classes();
    std::vector<Eigen::Index> counts;
    class_counts(batch, k, counts);
    auto [layer, pos] = t.locate(node);
    const Eigen::Index D = t.chi * t.chi;
    std::vector<CMat> parts(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        auto [cls, w] = seed_for_example(batch.ys[i], k, counts);
        std::vector<DensityMatrix> leaves = leaf_states(enc, batch.xs[i], t.chi);
        ContractionTrace trace = contract_traced(model, ops, leaves);
        CMat proj =
            model.readout.class_projector(model.readout.root_dim(t.chi), cls);
        Adjoints adj = backward(model, ops, trace, proj);
        CMat r = kron(trace.states[layer][2 * pos].m, trace.states[layer][2 * pos + 1].m);
        CMat w_ext = (model.wide_root() && layer == t.layers - 1)
                         ? adj.node_down[node]
                         : extend_first(adj.node_down[node], t.chi);
        parts[i] = w * kron(w_ext, r.transpose());
    }, threads);
    CMat m = CMat::Zero(D * D, D * D);
    for (const CMat& part : parts) m += part;
    return m;
}

// Sinusoid coefficients of one episode's contribution over a batch:
// f = sum_n (a_n + b_n cos th_n + c_n sin th_n), weights already folded in.
struct EpisodeEnvelope {
    RVec a, b, c;  // per example
};

inline EpisodeEnvelope episode_environment(const TTNModel& model, const NodeOperators& ops,
                                           const EncodingParams& enc, const Batch& batch,
                                           Eigen::Index episode, unsigned threads) {
    const TreeTopology& t = model.topology;
    const int k = model.readout.num_classes();
    std::vector<Eigen::Index> counts;
    class_counts(batch, k, counts);
    const Eigen::Index group = (t.chi == 2) ? 1 : 2;
    const Eigen::Index leaf = episode / group;
    EpisodeEnvelope env;
    env.a = RVec::Zero(batch.size());
    env.b = RVec::Zero(batch.size());
    env.c = RVec::Zero(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        auto [cls, w] = seed_for_example(batch.ys[i], k, counts);
        std::vector<DensityMatrix> leaves = leaf_states(enc, batch.xs[i], t.chi);
        ContractionTrace trace = contract_traced(model, ops, leaves);
        CMat proj =
            model.readout.class_projector(model.readout.root_dim(t.chi), cls);
        Adjoints adj = backward(model, ops, trace, proj);
        CMat v;
        if (group == 1) {
            v = adj.leaf[leaf];
        } else {
            RVec theta = angles(enc, batch.xs[i]);
            if (episode % 2 == 0)
                v = adjoint_first(adj.leaf[leaf], episode_state(theta[2 * leaf + 1]).m);
            else
                v = adjoint_second(adj.leaf[leaf], episode_state(theta[2 * leaf]).m);
        }
        // tr(V rho(theta)) = (V00+V11)/2 + (V00-V11)/2 cos th + Re V01 sin th
        env.a[i] = w * 0.5 * (v(0, 0) + v(1, 1)).real();
        env.b[i] = w * 0.5 * (v(0, 0) - v(1, 1)).real();
        env.c[i] = w * v(0, 1).real();
    }, threads);
    return env;
}

inline double episode_value(const EpisodeEnvelope& env, const RVec& theta) {
    double f = 0;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
        f += env.a[i] + env.b[i] * std::cos(theta[i]) + env.c[i] * std::sin(theta[i]);
    return f;
}

}  // namespace detail

// Sequential conjugate-gradient sweeps over individual node tensors (and,
// with feature optimization, individual episodes), each optimized against
// its environment on a fresh stratified batch. Requires an untied model.
inline TrainResult train_sweeps(TTNModel model, EncodingParams enc,
                                const std::vector<RVec>& xs, const std::vector<int>& ys,
                                const TrainConfig& config,
                                const EpochCallback& on_sweep = {},
                                const NodeUpdateCallback& on_node = {}) {
    config.validate();
    if (model.tied)
        throw config_error(
            "train_sweeps requires an untied model (per-node parameters); "
            "tied models train with train_global");
    if (xs.empty()) throw config_error("train_sweeps: empty dataset");
    const TreeTopology& t = model.topology;
    const int k = model.readout.num_classes();
    const Eigen::Index d = t.chi * t.chi;
    detail::StratifiedSampler sampler(ys, k, Rng(derive_seed(config.seed, 0x5EEB5)));
    TrainResult result;

    auto draw_batch = [&]() {
        if (Eigen::Index(xs.size()) <= config.batch_size) {
            std::vector<std::size_t> all(xs.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            return detail::gather(xs, ys, all);
        }
        return detail::gather(xs, ys, sampler.draw(config.batch_size));
    };

    for (int sweep = 0; sweep < config.sweeps; ++sweep) {
        for (Eigen::Index node = 0; node < t.node_count(); ++node) {
            Batch batch = draw_batch();
            NodeOperators ops = build_operators(model);
            CMat env = detail::node_environment_sum(model, ops, enc, batch, node,
                                                    config.threads);
            RVec v = model.params[node];
            auto value = [&](const RVec& p) {
                return environment_value(env, expm_hermitian(herm_from_params(p, d)));
            };
            auto gradient = [&](const RVec& p) {
                HermEig eig = eig_hermitian(herm_from_params(p, d));
                Unitary u = expm_from_eig(eig);
                CVec vec(d * d);
                for (Eigen::Index a = 0; a < d; ++a)
                    for (Eigen::Index c = 0; c < d; ++c) vec[a * d + c] = u.m(a, c);
                CVec y = env * vec;
                CMat ymat(d, d);
                for (Eigen::Index a = 0; a < d; ++a)
                    for (Eigen::Index c = 0; c < d; ++c) ymat(a, c) = y[a * d + c];
                return detail::project_gradient(ymat, eig);
            };
            double before = value(v);
            double after = cg_maximize(v, value, gradient,
                                       CgOptions{config.cg_tol, config.cg_max_iters_ttn});
            if (after >= before) model.params[node] = v;  // never step downhill
            if (on_node) on_node({sweep, node, before, std::max(before, after)});
        }
        if (config.feature_optimization) {
            for (Eigen::Index episode = 0; episode < enc.E; ++episode) {
                Batch batch = draw_batch();
                NodeOperators ops = build_operators(model);
                detail::EpisodeEnvelope env = detail::episode_environment(
                    model, ops, enc, batch, episode, config.threads);
                // optimize the unmasked row coordinates plus beta
                std::vector<Eigen::Index> free_idx;
                for (Eigen::Index i = 0; i < enc.p; ++i)
                    if (enc.mask(episode, i)) free_idx.push_back(i);
                const Eigen::Index nf = Eigen::Index(free_idx.size());
                RVec v(nf + 1);
                for (Eigen::Index j = 0; j < nf; ++j) v[j] = enc.omega(episode, free_idx[j]);
                v[nf] = enc.beta[episode];
                auto thetas = [&](const RVec& p) {
                    RVec th(batch.size());
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        double acc = p[nf];
                        for (Eigen::Index j = 0; j < nf; ++j)
                            acc += p[j] * batch.xs[i][free_idx[j]];
                        th[Eigen::Index(i)] = acc;
                    }
                    return th;
                };
                auto value = [&](const RVec& p) {
                    return detail::episode_value(env, thetas(p));
                };
                auto gradient = [&](const RVec& p) {
                    RVec th = thetas(p);
                    RVec g = RVec::Zero(nf + 1);
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        Eigen::Index ii = Eigen::Index(i);
                        double ds = -env.b[ii] * std::sin(th[ii]) +
                                    env.c[ii] * std::cos(th[ii]);
                        for (Eigen::Index j = 0; j < nf; ++j)
                            g[j] += ds * batch.xs[i][free_idx[j]];
                        g[nf] += ds;
                    }
                    return g;
                };
                double before = value(v);
                double after =
                    cg_maximize(v, value, gradient,
                                CgOptions{config.cg_tol, config.cg_max_iters_features});
                if (after >= before) {
                    for (Eigen::Index j = 0; j < nf; ++j)
                        enc.omega(episode, free_idx[j]) = v[j];
                    enc.beta[episode] = v[nf];
                }
            }
        }
        // sweep-level metrics on a capped deterministic prefix of the data
        std::size_t cap = std::min<std::size_t>(xs.size(), 2048);
        Batch eval;
        eval.xs.assign(xs.begin(), xs.begin() + cap);
        eval.ys.assign(ys.begin(), ys.begin() + cap);
        auto [f, pr] = objective_batch(model, enc, eval, config.threads);
        MetricsEntry entry;
        entry.epoch = sweep;
        entry.train_f = f;
        entry.train_pr_error = pr;
        result.history.push_back(entry);
        if (on_sweep) on_sweep(entry);
    }
    result.model = std::move(model);
    result.enc = std::move(enc);
    return result;
}

// Free (trainable) parameter count with its feature/tensor breakdown:
// sum_e (r_e + 1) feature parameters plus (layers or nodes) * (chi^4 - 1).
struct ParameterBreakdown {
    Eigen::Index features = 0;
    Eigen::Index ttn = 0;
    Eigen::Index total() const { return features + ttn; }
};

inline ParameterBreakdown count_parameters(const TTNModel& model,
                                           const EncodingParams& enc) {
    ParameterBreakdown out;
    for (Eigen::Index e = 0; e < enc.E; ++e) out.features += enc.nonzeros_in_row(e) + 1;
    out.ttn = model.param_vector_count() * model.topology.params_per_node();
    return out;
}

}  // namespace qksttn

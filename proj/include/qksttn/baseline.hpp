#pragma once

// Classical post-processing of the kitchen-sink features: an L2-regularized
// hinge-loss linear classifier trained by deterministic dual coordinate
// descent (bias handled through feature augmentation, so the bias is
// regularized too), one-vs-one multi-class aggregation with
// smallest-label tie breaking, regularization search, and the
// tensor-network ablation path.

#include <map>
#include <vector>

#include "qksttn/encoding.hpp"
#include "qksttn/ttn.hpp"

namespace qksttn {

// Per-example, per-episode P(outcome = 1). Single shot draws one Bernoulli
// bit per episode (never averaged); finite multi-shot returns frequencies;
// exact returns sin^2(theta/2) itself. Rows are generated on independent
// derived streams so parallel generation is reproducible.
inline RMat qks_features(const EncodingParams& enc, const std::vector<RVec>& xs,
                         Shots shots, Rng& rng, unsigned threads = 0) {
    RMat out(Eigen::Index(xs.size()), enc.E);
    const std::uint64_t base = rng.seed();
    parallel_for(xs.size(), [&](std::size_t i) {
        Rng row_rng(derive_seed(base, 0xF0A7 + i));
        RVec theta = angles(enc, xs[i]);
        for (Eigen::Index e = 0; e < enc.E; ++e) {
            double s = std::sin(theta[e] / 2);
            double p1 = s * s;
            if (shots.is_exact()) {
                out(Eigen::Index(i), e) = p1;
            } else {
                std::binomial_distribution<long> bin(long(*shots.n), p1);
                out(Eigen::Index(i), e) = double(bin(row_rng.engine())) / double(*shots.n);
            }
        }
    }, threads);
    return out;
}

struct LinearModel {
    RVec weights;
    double bias = 0;
    double C = 1.0;

    double decision(const RVec& x) const { return weights.dot(x) + bias; }
    int predict(const RVec& x) const { return decision(x) >= 0 ? 1 : 0; }
};

// Primal objective (1/2)(|w|^2 + b^2) + C sum hinge, the quantity the dual
// solver minimizes; exposed for verification.
inline double svm_primal_objective(const LinearModel& model, const RMat& X,
                                   const std::vector<int>& y) {
    double obj = 0.5 * (model.weights.squaredNorm() + model.bias * model.bias);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double margin = double(2 * y[i] - 1) * model.decision(X.row(i).transpose());
        obj += model.C * std::max(0.0, 1.0 - margin);
    }
    return obj;
}

struct SvmOptions {
    double tol = 1e-8;   // max projected-gradient magnitude
    int max_passes = 2000;
};

// L1-loss SVM by dual coordinate descent. Labels must be {0, 1}; internally
// y = +/-1 with label 1 positive. Runs to a tight optimum, so the fitted
// model does not depend on the order of the training examples.
inline LinearModel train_linear(const RMat& X, const std::vector<int>& y, double C,
                                const SvmOptions& opt = {}) {
    const Eigen::Index n = X.rows(), p = X.cols();
    if (n < 1 || Eigen::Index(y.size()) != n)
        throw domain_error("train_linear: feature/label size mismatch");
    bool has0 = false, has1 = false;
    for (int label : y) {
        if (label == 0) has0 = true;
        else if (label == 1) has1 = true;
        else throw domain_error("train_linear: labels must be 0 or 1");
    }
    if (!has0 || !has1)
        throw domain_error("train_linear: both classes must be present");
    if (!(C > 0)) throw config_error("train_linear: C must be positive");

    RVec wbar = RVec::Zero(p + 1);  // augmented with the bias feature
    RVec alpha = RVec::Zero(n);
    RVec qdiag(n);
    for (Eigen::Index i = 0; i < n; ++i) qdiag[i] = X.row(i).squaredNorm() + 1.0;

    std::vector<Eigen::Index> order(n);
    for (Eigen::Index i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 eng(0x5b3a9u);  // internal, fixed: results depend on data only

    for (int pass = 0; pass < opt.max_passes; ++pass) {
        shuffle_vec(order, eng);
        double pg_max = 0;
        for (Eigen::Index i : order) {
            double yi = double(2 * y[i] - 1);
            double g = yi * (X.row(i).dot(wbar.head(p)) + wbar[p]) - 1.0;
            double pg = g;
            if (alpha[i] <= 0)
                pg = std::min(g, 0.0);
            else if (alpha[i] >= C)
                pg = std::max(g, 0.0);
            pg_max = std::max(pg_max, std::abs(pg));
            if (std::abs(pg) > 1e-14) {
                double a_new = std::min(std::max(alpha[i] - g / qdiag[i], 0.0), C);
                double delta = (a_new - alpha[i]) * yi;
                wbar.head(p) += delta * X.row(i).transpose();
                wbar[p] += delta;
                alpha[i] = a_new;
            }
        }
        if (pg_max < opt.tol) break;
    }
    LinearModel model;
    model.weights = wbar.head(p);
    model.bias = wbar[p];
    model.C = C;
    return model;
}

inline double error_rate(const std::vector<int>& predicted, const std::vector<int>& truth) {
    double wrong = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        wrong += (predicted[i] != truth[i]) ? 1 : 0;
    return truth.empty() ? 0.0 : wrong / double(truth.size());
}

inline double evaluate(const LinearModel& model, const RMat& X, const std::vector<int>& y) {
    std::vector<int> pred(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        pred[i] = model.predict(X.row(i).transpose());
    return error_rate(pred, y);
}

// ---------------------------------------------------------------------------
// One-vs-one multi-class aggregation
// ---------------------------------------------------------------------------

struct OvOEnsemble {
    std::vector<std::pair<int, int>> pairs;  // (a, b) with a < b
    std::vector<LinearModel> models;         // parallel to pairs
};

// Majority vote over per-pair winners; ties go to the smallest label.
inline int ovo_vote(const std::vector<int>& winners) {
    std::map<int, int> tally;
    for (int w : winners) tally[w] += 1;
    int best = winners.at(0), best_count = -1;
    for (auto [label, count] : tally)
        if (count > best_count) {  // map iterates ascending: ties keep smaller
            best = label;
            best_count = count;
        }
    return best;
}

inline OvOEnsemble ovo_train(const RMat& features, const std::vector<int>& labels,
                             double C, const SvmOptions& opt = {}, unsigned threads = 0) {
    std::vector<int> classes;
    for (int y : labels)
        if (std::find(classes.begin(), classes.end(), y) == classes.end())
            classes.push_back(y);
    std::sort(classes.begin(), classes.end());
    if (classes.size() < 2) throw domain_error("ovo_train: need at least 2 classes");

    OvOEnsemble ens;
    for (std::size_t a = 0; a < classes.size(); ++a)
        for (std::size_t b = a + 1; b < classes.size(); ++b)
            ens.pairs.push_back({classes[a], classes[b]});
    ens.models.resize(ens.pairs.size());
    parallel_for(ens.pairs.size(), [&](std::size_t k) {
        auto [a, b] = ens.pairs[k];
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < features.rows(); ++i)
            if (labels[i] == a || labels[i] == b) idx.push_back(i);
        RMat sub(Eigen::Index(idx.size()), features.cols());
        std::vector<int> sub_y(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            sub.row(Eigen::Index(i)) = features.row(idx[i]);
            sub_y[i] = (labels[idx[i]] == b) ? 1 : 0;
        }
        ens.models[k] = train_linear(sub, sub_y, C, opt);
    }, threads);
    return ens;
}

inline std::vector<int> ovo_predict(const OvOEnsemble& ens, const RMat& features) {
    std::vector<int> out(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        std::vector<int> winners(ens.pairs.size());
        for (std::size_t k = 0; k < ens.pairs.size(); ++k) {
            auto [a, b] = ens.pairs[k];
            winners[k] = ens.models[k].predict(features.row(i).transpose()) == 1 ? b : a;
        }
        out[i] = ovo_vote(winners);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regularization search: random C draws, log-uniform over [1e-3, 1e3],
// scored by stratified 5-fold cross-validation.
// ---------------------------------------------------------------------------

struct CSearchOptions {
    int draws = 20;
    int folds = 5;
    double log10_lo = -3, log10_hi = 3;
};

// Candidate ranking tolerates a much looser solve than the final fit.
inline constexpr SvmOptions kCvSvmOptions{1e-4, 500};

inline double select_C(const RMat& X, const std::vector<int>& y, Rng& rng,
                       const CSearchOptions& search = {},
                       const SvmOptions& opt = kCvSvmOptions,
                       unsigned threads = 0) {
    const Eigen::Index n = X.rows();
    int max_label = *std::max_element(y.begin(), y.end());
    std::vector<std::vector<Eigen::Index>> pools(max_label + 1);
    for (Eigen::Index i = 0; i < n; ++i) pools[y[i]].push_back(i);
    std::vector<std::vector<Eigen::Index>> fold_of(search.folds);
    for (auto& pool : pools) {
        shuffle_vec(pool, rng.engine());
        for (std::size_t j = 0; j < pool.size(); ++j)
            fold_of[j % search.folds].push_back(pool[j]);
    }
    std::vector<double> candidates(search.draws);
    for (int d = 0; d < search.draws; ++d)
        candidates[d] = std::pow(10.0, rng.uniform(search.log10_lo, search.log10_hi));

    std::vector<double> cv_error(search.draws, 0.0);
    parallel_for(std::size_t(search.draws), [&](std::size_t d) {
        double err_sum = 0;
        for (int f = 0; f < search.folds; ++f) {
            std::vector<Eigen::Index> train_idx;
            for (int g = 0; g < search.folds; ++g)
                if (g != f)
                    train_idx.insert(train_idx.end(), fold_of[g].begin(), fold_of[g].end());
            RMat tr(Eigen::Index(train_idx.size()), X.cols());
            std::vector<int> tr_y(train_idx.size());
            for (std::size_t i = 0; i < train_idx.size(); ++i) {
                tr.row(Eigen::Index(i)) = X.row(train_idx[i]);
                tr_y[i] = y[train_idx[i]];
            }
            RMat va(Eigen::Index(fold_of[f].size()), X.cols());
            std::vector<int> va_y(fold_of[f].size());
            for (std::size_t i = 0; i < fold_of[f].size(); ++i) {
                va.row(Eigen::Index(i)) = X.row(fold_of[f][i]);
                va_y[i] = y[fold_of[f][i]];
            }
            LinearModel m = train_linear(tr, tr_y, candidates[d], opt);
            err_sum += evaluate(m, va, va_y);
        }
        cv_error[d] = err_sum / double(search.folds);
    }, threads);

    int best = 0;
    for (int d = 1; d < search.draws; ++d)
        if (cv_error[d] < cv_error[best]) best = d;
    return candidates[best];
}

// Ablation: drop the tensor network after feature training and classify
// the optimized non-local features with the linear baseline instead.
inline double ablate_tn(const EncodingParams& enc, const std::vector<RVec>& train_xs,
                        const std::vector<int>& train_ys,
                        const std::vector<RVec>& test_xs, const std::vector<int>& test_ys,
                        double C, unsigned threads = 0) {
    Rng dummy(0);  // EXACT features consume no randomness
    RMat train_f = qks_features(enc, train_xs, Shots::exact(), dummy, threads);
    RMat test_f = qks_features(enc, test_xs, Shots::exact(), dummy, threads);
    LinearModel model = train_linear(train_f, train_ys, C);
    return evaluate(model, test_f, test_ys);
}

}  // namespace qksttn

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "qksttn/oracle.hpp"
#include "qksttn/training.hpp"

using namespace qksttn;

namespace {

// two well-separated constant prototypes with small jitter
Batch toy_batch(Eigen::Index p, int per_class, std::uint64_t seed, double jitter = 0.05) {
    Rng rng(seed);
    Batch b;
    RVec proto0 = RVec::Zero(p), proto1 = RVec::Zero(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        proto0[i] = (i % 2 == 0) ? 1.0 : 0.0;
        proto1[i] = (i % 2 == 0) ? 0.0 : 1.0;
    }
    for (int n = 0; n < per_class; ++n)
        for (int cls = 0; cls < 2; ++cls) {
            RVec x = (cls == 0) ? proto0 : proto1;
            for (Eigen::Index i = 0; i < p; ++i) x[i] += jitter * rng.normal();
            b.xs.push_back(x);
            b.ys.push_back(cls);
        }
    return b;
}

struct Instance {
    TTNModel model;
    EncodingParams enc;
    Batch batch;
};

Instance random_instance(int E, int chi, bool tied, std::uint64_t seed, int per_class = 3,
                         Eigen::Index p = 4, Eigen::Index r = 0) {
    Rng rng(seed);
    Instance inst;
    if (r == 0) r = p;
    inst.enc = init_encoding(E, p, r, 1.0, rng);
    inst.model = init_ttn(build_topology(E, chi), tied, rng);
    inst.batch = toy_batch(p, per_class, seed + 1, 0.3);
    return inst;
}

double objective_of(const Instance& inst) {
    return objective_batch(inst.model, inst.enc, inst.batch, 1).first;
}

}  // namespace

TEST_CASE("objective_batch: perfect routing, indistinguishable classes, decomposition") {
    // routing construction: identity tree, theta = pi * x
    EncodingParams enc;
    enc.E = 2;
    enc.p = 1;
    enc.sigma = 1;
    enc.omega = RMat::Constant(2, 1, M_PI);
    enc.beta = RVec::Zero(2);
    enc.mask.setConstant(2, 1, true);
    TTNModel model;
    model.topology = build_topology(2, 2);
    model.tied = false;
    model.readout = ReadoutSpec::binary_qubit();
    model.params.assign(1, RVec::Zero(model.topology.params_per_node()));

    Batch routed;
    routed.xs = {RVec::Zero(1), RVec::Ones(1)};
    routed.ys = {0, 1};
    auto [f, pr] = objective_batch(model, enc, routed);
    CHECK(testutil::close(f, 1.0, 1e-12));
    CHECK(testutil::close(pr, 0.0, 1e-12));

    Batch same;
    same.xs = {RVec::Zero(1), RVec::Zero(1)};
    same.ys = {0, 1};
    auto [f2, pr2] = objective_batch(model, enc, same);
    CHECK(testutil::close(f2, 0.0, 1e-12));
    CHECK(testutil::close(pr2, 0.5, 1e-12));

    // batch objective equals its per-example decomposition
    Instance inst = random_instance(4, 2, false, 100, 2);
    auto [fb, prb] = objective_batch(inst.model, inst.enc, inst.batch);
    Eigen::Index n0 = 0, n1 = 0;
    for (int y : inst.batch.ys) (y == 0 ? n0 : n1) += 1;
    double acc = 0;
    NodeOperators ops = build_operators(inst.model);
    for (std::size_t i = 0; i < inst.batch.size(); ++i) {
        DensityMatrix root =
            contract_traced(inst.model, ops, leaf_states(inst.enc, inst.batch.xs[i], 2))
                .root();
        double p0 = readout_probs(root, inst.model.readout)[0];
        acc += (inst.batch.ys[i] == 0) ? p0 / double(n0) : -p0 / double(n1);
    }
    CHECK(testutil::close(fb, acc, 1e-12));
    CHECK(testutil::close(prb, 0.5 - 0.5 * fb, 1e-12));

    Batch missing;
    missing.xs = {RVec::Zero(1)};
    missing.ys = {0};
    CHECK_THROWS_AS(objective_batch(model, enc, missing), domain_error);
}

TEST_CASE("objective_batch agrees with the dense oracle objective") {
    for (auto [E, chi] : std::vector<std::pair<int, int>>{{4, 2}, {4, 4}, {8, 2}}) {
        Instance inst = random_instance(E, chi, false, 200 + E + chi, 2);
        double f_tree = objective_of(inst);
        double f_dense =
            oracle::dense_objective(inst.enc, inst.model, inst.batch.xs, inst.batch.ys);
        CHECK(testutil::close(f_tree, f_dense, 1e-10));
    }
}

TEST_CASE("grad_ttn matches central finite differences") {
    for (auto [E, chi, tied] : std::vector<std::tuple<int, int, bool>>{
             {4, 2, false}, {4, 2, true}, {8, 2, false}, {4, 4, false}, {4, 4, true}}) {
        Instance inst = random_instance(E, chi, tied, 300 + E * 10 + chi + (tied ? 1 : 0));
        GradientBundle g = grad_ttn(inst.model, inst.enc, inst.batch, 1);
        const double h = 1e-5;
        for (std::size_t j = 0; j < inst.model.params.size(); ++j) {
            for (Eigen::Index a = 0; a < inst.model.params[j].size(); a += 3) {
                Instance plus = inst, minus = inst;
                plus.model.params[j][a] += h;
                minus.model.params[j][a] -= h;
                double fd = (objective_of(plus) - objective_of(minus)) / (2 * h);
                CHECK(testutil::grad_close(g.ttn[j][a], fd));
            }
        }
    }
}

TEST_CASE("grad_ttn vanishes at a symmetric optimum") {
    Instance inst = random_instance(4, 2, false, 404, 2);
    Batch same;
    for (std::size_t i = 0; i < inst.batch.size(); ++i) {
        same.xs.push_back(inst.batch.xs[0]);
        same.ys.push_back(int(i) % 2);
    }
    GradientBundle g = grad_ttn(inst.model, inst.enc, same, 1);
    for (const RVec& v : g.ttn) CHECK(v.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tied gradient equals the sum of per-node gradients over each layer") {
    Instance inst = random_instance(8, 2, true, 500);
    GradientBundle tied_g = grad_ttn(inst.model, inst.enc, inst.batch, 1);

    TTNModel untied = inst.model;
    untied.tied = false;
    untied.params.clear();
    const TreeTopology& t = inst.model.topology;
    for (Eigen::Index l = 0; l < t.layers; ++l)
        for (Eigen::Index i = 0; i < t.nodes_in_layer(l); ++i)
            untied.params.push_back(inst.model.params[l]);
    GradientBundle untied_g = grad_ttn(untied, inst.enc, inst.batch, 1);

    for (Eigen::Index l = 0; l < t.layers; ++l) {
        RVec sum = RVec::Zero(t.params_per_node());
        for (Eigen::Index i = 0; i < t.nodes_in_layer(l); ++i)
            sum += untied_g.ttn[t.node_id(l, i)];
        CHECK((tied_g.ttn[l] - sum).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("grad_features matches central finite differences and respects the mask") {
    for (auto [E, chi] : std::vector<std::pair<int, int>>{{4, 2}, {4, 4}}) {
        Instance inst = random_instance(E, chi, false, 600 + E + chi, 3, 4, 3);
        GradientBundle g = grad_features(inst.model, inst.enc, inst.batch, 1);
        const double h = 1e-5;
        for (Eigen::Index e = 0; e < inst.enc.E; ++e) {
            for (Eigen::Index i = 0; i < inst.enc.p; ++i) {
                if (!inst.enc.mask(e, i)) {
                    CHECK(g.d_omega(e, i) == 0.0);
                    continue;
                }
                Instance plus = inst, minus = inst;
                plus.enc.omega(e, i) += h;
                minus.enc.omega(e, i) -= h;
                double fd = (objective_of(plus) - objective_of(minus)) / (2 * h);
                CHECK(testutil::grad_close(g.d_omega(e, i), fd));
            }
            Instance plus = inst, minus = inst;
            plus.enc.beta[e] += h;
            minus.enc.beta[e] -= h;
            double fd = (objective_of(plus) - objective_of(minus)) / (2 * h);
            CHECK(testutil::grad_close(g.d_beta[e], fd));
        }
    }
}

TEST_CASE("grad_features beta/omega chain-rule identity at all-ones inputs") {
    Instance inst = random_instance(4, 2, false, 700);
    for (auto& x : inst.batch.xs) x = RVec::Ones(inst.enc.p);
    GradientBundle g = grad_features(inst.model, inst.enc, inst.batch, 1);
    for (Eigen::Index e = 0; e < inst.enc.E; ++e)
        for (Eigen::Index i = 0; i < inst.enc.p; ++i)
            if (inst.enc.mask(e, i))
                CHECK(testutil::close(g.d_omega(e, i), g.d_beta[e], 1e-12));
}

TEST_CASE("adam_step: zero gradient, first-step magnitude, quadratic descent") {
    Instance inst = random_instance(4, 2, false, 800);
    TTNModel model = inst.model;
    EncodingParams enc = inst.enc;
    AdamState state = AdamState::zeros_like(model, enc);
    GradientBundle zero = GradientBundle::zeros_like(model, enc);
    std::vector<RVec> before = model.params;
    adam_step(model, enc, zero, state, 0.01);
    CHECK(state.step == 1);
    for (std::size_t j = 0; j < before.size(); ++j)
        CHECK((model.params[j] - before[j]).cwiseAbs().maxCoeff() == 0.0);

    GradientBundle unit = GradientBundle::zeros_like(model, enc);
    for (auto& v : unit.ttn) v.setOnes();
    before = model.params;
    AdamState fresh = AdamState::zeros_like(model, enc);
    adam_step(model, enc, unit, fresh, 0.01);
    for (std::size_t j = 0; j < before.size(); ++j)
        for (Eigen::Index a = 0; a < before[j].size(); ++a)
            CHECK(testutil::close(model.params[j][a] - before[j][a], 0.01, 1e-9));

    // ascent on f = -(x)^2/2 decreases the quadratic loss monotonically
    // after warmup
    RVec x = RVec::Constant(3, 5.0);
    RVec m = RVec::Zero(3), v = RVec::Zero(3);
    double prev = std::numeric_limits<double>::infinity();
    AdamHyper hyper;
    for (int step = 1; step <= 100; ++step) {
        RVec g = -x;  // gradient of f
        detail::adam_axis(x, g, m, v, long(step), 0.05, hyper);
        double loss = 0.5 * x.squaredNorm();
        if (step > 10) CHECK(loss < prev);
        prev = loss;
    }

    GradientBundle bad = GradientBundle::zeros_like(model, enc);
    bad.d_beta = RVec::Zero(enc.E + 1);
    CHECK_THROWS_AS(adam_step(model, enc, bad, state, 0.01), shape_error);
}

TEST_CASE("cosine annealing with warm restarts follows the enumerated schedule") {
    CosineRestartSchedule s{1.0, 2.0};
    CHECK(s.factor(0.0) == 1.0);
    CHECK(testutil::close(CosineRestartSchedule::cosine(1.0, 1.0), 0.0, 1e-15));
    CHECK(testutil::close(CosineRestartSchedule::cosine(2.0, 2.0), 0.0, 1e-15));

    // cycle lengths 1,2,4,8,16 -> restarts at epochs 1,3,7,15,31
    struct Row {
        double t, factor;
    };
    const double q = 0.5 * (1 + std::cos(M_PI / 4));
    const double q3 = 0.5 * (1 + std::cos(3 * M_PI / 4));
    std::vector<Row> table = {
        {0, 1.0}, {1, 1.0},  {2, 0.5}, {3, 1.0},  {4, q},   {5, 0.5},
        {6, q3},  {7, 1.0},  {9, q},   {11, 0.5}, {13, q3}, {15, 1.0},
        {19, q},  {23, 0.5}, {27, q3}, {31, 1.0},
    };
    for (const Row& row : table)
        CHECK(testutil::close(s.factor(row.t), row.factor, 1e-12));
}

TEST_CASE("adamw_restarts_step applies the cosine factor to rate and decay") {
    Instance inst = random_instance(4, 2, false, 900);
    TTNModel model = inst.model;
    EncodingParams enc = inst.enc;
    AdamState state = AdamState::zeros_like(model, enc);
    GradientBundle zero = GradientBundle::zeros_like(model, enc);
    CosineRestartSchedule s{1.0, 2.0};
    std::vector<RVec> before = model.params;
    // zero gradient at factor 1: parameters shrink by exactly the base decay
    adamw_restarts_step(model, enc, zero, state, 1e-3, 0.1, s, 0.0);
    for (std::size_t j = 0; j < before.size(); ++j)
        CHECK((model.params[j] - 0.9 * before[j]).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("train_global separates the toy task and is deterministic") {
    Batch data = toy_batch(4, 16, 4242);
    Rng rng(31337);
    EncodingParams enc = init_encoding(4, 4, 4, 1.0, rng);
    TTNModel model = init_ttn(build_topology(4, 2), false, rng);

    TrainConfig config;
    config.batch_size = 16;
    config.epochs = 50;
    config.optimizer = Optimizer::Adam;
    config.learning_rate = 0.05;
    config.feature_optimization = true;
    config.seed = 7;
    config.threads = 1;

    TrainResult res = train_global(model, enc, data.xs, data.ys, config);
    CHECK(!res.diverged);
    CHECK(res.history.size() == 50);
    CHECK(res.history.back().train_pr_error <= 0.01);

    TrainResult res2 = train_global(model, enc, data.xs, data.ys, config);
    for (std::size_t i = 0; i < res.history.size(); ++i) {
        CHECK(res.history[i].train_f == res2.history[i].train_f);
        CHECK(res.history[i].train_pr_error == res2.history[i].train_pr_error);
    }
}

TEST_CASE("train_global with vanishing rate and feature optimization off is a no-op") {
    Batch data = toy_batch(4, 8, 808);
    Rng rng(11);
    EncodingParams enc = init_encoding(4, 4, 4, 1.0, rng);
    TTNModel model = init_ttn(build_topology(4, 2), false, rng);
    TrainConfig config;
    config.batch_size = 8;
    config.epochs = 5;
    config.learning_rate = 1e-300;
    config.feature_optimization = false;
    config.seed = 3;
    config.threads = 1;
    TrainResult res = train_global(model, enc, data.xs, data.ys, config);
    double first = res.history.front().train_f;
    for (const auto& entry : res.history)
        CHECK(testutil::close(entry.train_f, first, 1e-9));
}

TEST_CASE("masked coordinates stay exactly zero and unitarity survives training") {
    Batch data = toy_batch(6, 8, 909);
    Rng rng(21);
    EncodingParams enc = init_encoding(4, 6, 3, 1.0, rng);
    TTNModel model = init_ttn(build_topology(4, 2), false, rng);
    TrainConfig config;
    config.batch_size = 8;
    config.epochs = 10;
    config.learning_rate = 0.05;
    config.seed = 5;
    config.threads = 1;
    TrainResult res = train_global(model, enc, data.xs, data.ys, config);
    for (Eigen::Index e = 0; e < enc.E; ++e)
        for (Eigen::Index i = 0; i < enc.p; ++i)
            if (!enc.mask(e, i)) CHECK(res.enc.omega(e, i) == 0.0);
    for (const RVec& v : res.model.params)
        CHECK(is_unitary(expm_hermitian(herm_from_params(v, 4)).m, 1e-12));
}

TEST_CASE("train_sweeps: monotone on a fixed batch, solves the toy task") {
    Batch data = toy_batch(4, 12, 555);
    Rng rng(61);
    EncodingParams enc = init_encoding(4, 4, 4, 1.0, rng);
    TTNModel model = init_ttn(build_topology(4, 2), false, rng);

    TrainConfig config;
    config.batch_size = 1024;  // >= dataset: every update sees the same batch
    config.sweeps = 3;
    config.optimizer = Optimizer::CgSweeps;
    config.feature_optimization = true;
    config.seed = 17;
    config.threads = 1;

    double f_prev = objective_batch(model, enc, data, 1).first;
    TrainResult res = train_sweeps(model, enc, data.xs, data.ys, config);
    for (const auto& entry : res.history) {
        CHECK(entry.train_f >= f_prev - 1e-9);
        f_prev = entry.train_f;
    }
    CHECK(res.history.back().train_pr_error <= 0.01);

    TTNModel tied = init_ttn(build_topology(4, 2), true, rng);
    CHECK_THROWS_AS(train_sweeps(tied, enc, data.xs, data.ys, config), config_error);
}

TEST_CASE("single-node tree sweep reproduces direct optimization of the unitary") {
    Batch data = toy_batch(3, 10, 777);
    Rng rng(71);
    EncodingParams enc = init_encoding(2, 3, 3, 1.0, rng);
    TTNModel model = init_ttn(build_topology(2, 2), false, rng);
    TrainConfig config;
    config.batch_size = 1024;
    config.sweeps = 1;
    config.optimizer = Optimizer::CgSweeps;
    config.feature_optimization = false;
    config.seed = 23;
    config.threads = 1;
    TrainResult res = train_sweeps(model, enc, data.xs, data.ys, config);

    RVec v = model.params[0];
    auto value = [&](const RVec& p) {
        TTNModel m = model;
        m.params[0] = p;
        return objective_batch(m, enc, data, 1).first;
    };
    auto gradient = [&](const RVec& p) {
        TTNModel m = model;
        m.params[0] = p;
        return grad_ttn(m, enc, data, 1).ttn[0];
    };
    double direct = cg_maximize(v, value, gradient, CgOptions{1e-5, 100});
    double swept = res.history.back().train_f;
    CHECK(testutil::close(direct, swept, 1e-6));
}

TEST_CASE("gradients stay exact for multi-class wide-root models") {
    // 3-class toy with a 4-outcome wide-root map on a chi=2 tree
    Rng rng(1211);
    EncodingParams enc = init_encoding(4, 3, 3, 1.0, rng);
    TTNModel model =
        init_ttn(build_topology(4, 2), false, rng, ReadoutSpec::outcome_map({0, 1, 2, 2}));
    Batch batch;
    std::mt19937_64 eng(5);
    std::normal_distribution<double> n;
    for (int i = 0; i < 9; ++i) {
        RVec x(3);
        for (int j = 0; j < 3; ++j) x[j] = n(eng);
        batch.xs.push_back(x);
        batch.ys.push_back(i % 3);
    }
    auto [f, pr] = objective_batch(model, enc, batch, 1);
    CHECK(testutil::close(pr, 1.0 - f, 1e-12));
    double f_dense = oracle::dense_objective(enc, model, batch.xs, batch.ys);
    CHECK(testutil::close(f, f_dense, 1e-10));

    GradientBundle g = evaluate_batch(model, enc, batch, true, true, 1).grad;
    const double h = 1e-5;
    auto objective = [&](const TTNModel& m, const EncodingParams& e) {
        return objective_batch(m, e, batch, 1).first;
    };
    for (std::size_t j = 0; j < model.params.size(); ++j)
        for (Eigen::Index a = 0; a < model.params[j].size(); a += 4) {
            TTNModel plus = model, minus = model;
            plus.params[j][a] += h;
            minus.params[j][a] -= h;
            double fd = (objective(plus, enc) - objective(minus, enc)) / (2 * h);
            CHECK(testutil::grad_close(g.ttn[j][a], fd));
        }
    for (Eigen::Index e = 0; e < enc.E; ++e) {
        EncodingParams plus = enc, minus = enc;
        plus.beta[e] += h;
        minus.beta[e] -= h;
        double fd = (objective(model, plus) - objective(model, minus)) / (2 * h);
        CHECK(testutil::grad_close(g.d_beta[e], fd));
    }
}

TEST_CASE("gradients stay exact for tied, sparse, wide-root chi=4 models") {
    Rng rng(2222);
    EncodingParams enc = init_encoding(8, 5, 3, 1.0, rng);
    std::vector<int> map(16);
    for (int o = 0; o < 16; ++o) map[o] = o % 5;
    TTNModel model =
        init_ttn(build_topology(8, 4), true, rng, ReadoutSpec::outcome_map(map));
    REQUIRE(model.wide_root());
    REQUIRE(model.tied);

    Batch batch;
    std::mt19937_64 eng(3);
    std::normal_distribution<double> n;
    for (int i = 0; i < 10; ++i) {
        RVec x(5);
        for (int j = 0; j < 5; ++j) x[j] = n(eng);
        batch.xs.push_back(x);
        batch.ys.push_back(i % 5);
    }
    BatchEval ev = evaluate_batch(model, enc, batch, true, true, 1);
    double f_dense = oracle::dense_objective(enc, model, batch.xs, batch.ys);
    CHECK(testutil::close(ev.f, f_dense, 1e-10));

    const double h = 1e-5;
    auto objective = [&](const TTNModel& m, const EncodingParams& e) {
        return objective_batch(m, e, batch, 1).first;
    };
    for (std::size_t j = 0; j < model.params.size(); ++j)
        for (Eigen::Index a = 0; a < model.params[j].size(); a += 17) {
            TTNModel plus = model, minus = model;
            plus.params[j][a] += h;
            minus.params[j][a] -= h;
            double fd = (objective(plus, enc) - objective(minus, enc)) / (2 * h);
            CHECK(testutil::grad_close(ev.grad.ttn[j][a], fd));
        }
    for (Eigen::Index e = 0; e < enc.E; ++e)
        for (Eigen::Index i = 0; i < enc.p; ++i) {
            if (!enc.mask(e, i)) {
                CHECK(ev.grad.d_omega(e, i) == 0.0);
                continue;
            }
            EncodingParams plus = enc, minus = enc;
            plus.omega(e, i) += h;
            minus.omega(e, i) -= h;
            double fd = (objective(model, plus) - objective(model, minus)) / (2 * h);
            CHECK(testutil::grad_close(ev.grad.d_omega(e, i), fd));
        }
}

TEST_CASE("train_sweeps works at chi=4 and stays monotone") {
    Batch data = toy_batch(4, 10, 616);
    Rng rng(81);
    EncodingParams enc = init_encoding(4, 4, 4, 1.0, rng);
    TTNModel model = init_ttn(build_topology(4, 4), false, rng);
    TrainConfig config;
    config.batch_size = 1024;
    config.sweeps = 2;
    config.optimizer = Optimizer::CgSweeps;
    config.feature_optimization = true;
    config.seed = 19;
    config.threads = 1;
    double f_prev = objective_batch(model, enc, data, 1).first;
    TrainResult res = train_sweeps(model, enc, data.xs, data.ys, config);
    for (const auto& entry : res.history) {
        CHECK(entry.train_f >= f_prev - 1e-9);
        f_prev = entry.train_f;
    }
    CHECK(res.history.back().train_f > 0.5);  // separable toy task
}

TEST_CASE("train_sweeps handles multi-class wide-root models monotonically") {
    Rng rng(141);
    EncodingParams enc = init_encoding(4, 4, 4, 1.0, rng);
    TTNModel model =
        init_ttn(build_topology(4, 2), false, rng, ReadoutSpec::outcome_map({0, 1, 2, 2}));
    Batch data;
    Rng jitter(142);
    for (int n = 0; n < 12; ++n)
        for (int cls = 0; cls < 3; ++cls) {
            RVec x(4);
            for (int i = 0; i < 4; ++i)
                x[i] = (i == cls ? 1.0 : 0.0) + 0.15 * jitter.normal();
            data.xs.push_back(x);
            data.ys.push_back(cls);
        }
    TrainConfig config;
    config.batch_size = 1024;
    config.sweeps = 2;
    config.optimizer = Optimizer::CgSweeps;
    config.feature_optimization = true;
    config.seed = 29;
    config.threads = 1;
    double f_prev = objective_batch(model, enc, data, 1).first;
    TrainResult res = train_sweeps(model, enc, data.xs, data.ys, config);
    for (const auto& entry : res.history) {
        CHECK(entry.train_f >= f_prev - 1e-9);
        f_prev = entry.train_f;
    }
    CHECK(res.history.back().train_f > f_prev - 1e-9);
    CHECK(res.history.back().train_pr_error < 0.35);
}

TEST_CASE("train_global with adamw warm restarts improves the toy objective") {
    Batch data = toy_batch(4, 16, 2727);
    Rng rng(91);
    EncodingParams enc = init_encoding(4, 4, 4, 1.0, rng);
    TTNModel model = init_ttn(build_topology(4, 2), false, rng);
    TrainConfig config;
    config.batch_size = 16;
    config.epochs = 31;  // a full restart ladder
    config.optimizer = Optimizer::AdamWRestarts;
    config.learning_rate = 0.05;
    config.weight_decay = 1e-4;
    config.seed = 13;
    config.threads = 1;
    TrainResult res = train_global(model, enc, data.xs, data.ys, config);
    CHECK(!res.diverged);
    CHECK(res.history.back().train_f > res.history.front().train_f);
    CHECK(res.history.back().train_pr_error < 0.1);

    TrainResult res2 = train_global(model, enc, data.xs, data.ys, config);
    CHECK(res.history.back().train_f == res2.history.back().train_f);
}

TEST_CASE("batch evaluation does not depend on the thread count") {
    Instance inst = random_instance(8, 2, false, 1500, 6);
    BatchEval serial = evaluate_batch(inst.model, inst.enc, inst.batch, true, true, 1);
    BatchEval parallel = evaluate_batch(inst.model, inst.enc, inst.batch, true, true, 4);
    CHECK(serial.f == parallel.f);
    CHECK(serial.pr_error == parallel.pr_error);
    for (std::size_t j = 0; j < serial.grad.ttn.size(); ++j)
        CHECK((serial.grad.ttn[j] - parallel.grad.ttn[j]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((serial.grad.d_omega - parallel.grad.d_omega).cwiseAbs().maxCoeff() == 0.0);
    CHECK((serial.grad.d_beta - parallel.grad.d_beta).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("count_parameters reproduces every benchmark parameter budget") {
    struct Row {
        bool tied;
        Eigen::Index r;
        Eigen::Index expect;
    };
    std::vector<Row> rows = {
        {false, 784, 466945}, {true, 784, 403960}, {true, 392, 203256},
        {true, 196, 102904},  {true, 98, 52728},   {true, 49, 27640},
    };
    TreeTopology t = build_topology(512, 4);
    for (const Row& row : rows) {
        Rng rng(1);
        EncodingParams enc = init_encoding(512, 784, row.r, 0.1, rng);
        TTNModel model;
        model.topology = t;
        model.tied = row.tied;
        model.params.assign(row.tied ? t.layers : t.node_count(),
                            RVec::Zero(t.params_per_node()));
        CHECK(count_parameters(model, enc).total() == row.expect);
    }
}

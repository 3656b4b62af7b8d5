#pragma once

// Experiment orchestration: validated run configurations, the four
// pipelines (qks-svm, qks-ttn, qks-ttn-fo, ablate), realization fan-out
// with derived seeds, hyperparameter grid search, the dataset-fraction
// scaling study with its power-law fit, pairwise/multi-class benchmarks,
// and record/model persistence. All randomness in a run flows from the
// config seed: realization r uses derive_seed(seed, 0x9000 + r), and each
// consumer (subsampling, encoding, tensors, training, C search, shot
// sampling) gets its own child stream.

#include <chrono>
#include <filesystem>
#include <optional>
#include <set>

#include "qksttn/baseline.hpp"
#include "qksttn/data.hpp"
#include "qksttn/fit.hpp"
#include "qksttn/model_io.hpp"
#include "qksttn/oracle.hpp"
#include "qksttn/record.hpp"
#include "qksttn/svg.hpp"
#include "qksttn/training.hpp"

namespace qksttn {

inline constexpr const char* kVersion = "0.1.0";

struct TaskSpec {
    std::string dataset = "mnist";  // mnist | fashion-mnist
    std::vector<int> labels;        // binary pair {a, b}; empty = all classes

    bool multiclass() const { return labels.empty(); }
};

struct RunConfig {
    TaskSpec task;
    std::string pipeline = "qks-svm";  // qks-svm | qks-ttn | qks-ttn-fo | ablate
    Eigen::Index episodes = 1000;
    Eigen::Index chi = 2;
    bool tied = false;
    Eigen::Index sparsity_r = 0;  // nonzeros per episode; 0 = dense
    double sigma = 0.1;
    Shots shots = Shots::exact();
    std::string multiclass_mode = "ovo";  // ovo | direct
    TrainConfig train;
    std::uint64_t seed = 0;
    int realizations = 1;
    std::string out_dir;
    std::string data_dir;
    double subsample_fraction = 1.0;
    bool deskew = false;
    std::optional<double> svm_c;  // fixed C; unset = randomized search
    bool export_features = false;  // qks-svm: write feature CSVs to out_dir
    int shard_index = 0, shard_count = 1;
    unsigned threads = 0;

    bool uses_ttn() const { return pipeline != "qks-svm"; }

    // Everything checkable before touching the data.
    void validate() const {
        static const std::set<std::string> pipelines = {"qks-svm", "qks-ttn",
                                                        "qks-ttn-fo", "ablate"};
        if (!pipelines.count(pipeline))
            throw config_error("unknown pipeline '" + pipeline + "'");
        if (task.dataset != "mnist" && task.dataset != "fashion-mnist")
            throw config_error("unknown dataset '" + task.dataset + "'");
        if (!task.multiclass() && task.labels.size() != 2)
            throw config_error("task labels must be a pair or empty (multi-class)");
        if (!task.multiclass() && task.labels[0] == task.labels[1])
            throw config_error("task label pair must be distinct");
        if (episodes < 1) throw config_error("episodes must be >= 1");
        if (!(sigma > 0)) throw config_error("sigma must be positive");
        if (realizations < 1) throw config_error("realizations must be >= 1");
        if (!(subsample_fraction > 0) || subsample_fraction > 1)
            throw config_error("subsample fraction must be in (0, 1]");
        if (shard_count < 1 || shard_index < 0 || shard_index >= shard_count)
            throw config_error("shard must satisfy 0 <= index < count");
        if (uses_ttn()) {
            build_topology(episodes, chi);  // rejects bad E/chi before data load
            if (multiclass_mode != "ovo" && multiclass_mode != "direct")
                throw config_error("multiclass mode must be 'ovo' or 'direct'");
            if (task.multiclass() && multiclass_mode == "direct" && chi != 4)
                throw config_error("direct multi-class readout needs chi = 4 "
                                   "(16 root outcomes)");
            train.validate();
        }
        if (sparsity_r < 0) throw config_error("sparsity_r must be >= 0");
    }

    static RunConfig from_json(const json& j);
    json to_json() const;
};

inline RunConfig RunConfig::from_json(const json& j) {
    static const std::set<std::string> known = {
        "task",       "pipeline",     "episodes",     "chi",
        "tied",       "sparsity_r",   "sigma",        "shots",
        "train",      "seed",         "realizations", "out_dir",
        "data_dir",   "subsample_fraction", "deskew", "svm_c",
        "shard_index", "shard_count", "threads",      "multiclass_mode",
        "export_features"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw config_error("unknown config key '" + it.key() + "'");

    RunConfig c;
    if (j.contains("task")) {
        const json& t = j.at("task");
        c.task.dataset = t.value("dataset", std::string("mnist"));
        if (t.contains("labels") && !t.at("labels").is_null())
            c.task.labels = t.at("labels").get<std::vector<int>>();
    }
    c.pipeline = j.value("pipeline", c.pipeline);
    c.episodes = j.value("episodes", c.episodes);
    c.chi = j.value("chi", c.chi);
    c.tied = j.value("tied", c.tied);
    c.sparsity_r = j.value("sparsity_r", c.sparsity_r);
    c.sigma = j.value("sigma", c.sigma);
    if (j.contains("shots")) {
        const json& s = j.at("shots");
        if (s.is_string() && s.get<std::string>() == "exact")
            c.shots = Shots::exact();
        else if (s.is_number_unsigned() || s.is_number_integer())
            c.shots = Shots::count(s.get<std::uint64_t>());
        else
            throw config_error("shots must be \"exact\" or a positive integer");
    }
    c.multiclass_mode = j.value("multiclass_mode", c.multiclass_mode);
    if (j.contains("train")) {
        const json& t = j.at("train");
        static const std::set<std::string> train_known = {
            "batch_size",  "epochs",   "optimizer", "learning_rate",
            "weight_decay", "restarts", "cg",       "sweeps"};
        for (auto it = t.begin(); it != t.end(); ++it)
            if (!train_known.count(it.key()))
                throw config_error("unknown train config key '" + it.key() + "'");
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.epochs = t.value("epochs", c.train.epochs);
        std::string opt = t.value("optimizer", std::string("adam"));
        if (opt == "adam")
            c.train.optimizer = Optimizer::Adam;
        else if (opt == "adamw-restarts")
            c.train.optimizer = Optimizer::AdamWRestarts;
        else if (opt == "cg-sweeps")
            c.train.optimizer = Optimizer::CgSweeps;
        else
            throw config_error("unknown optimizer '" + opt + "'");
        c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
        c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
        if (t.contains("restarts")) {
            const json& r = t.at("restarts");
            c.train.restart_t0 = r.value("t0", c.train.restart_t0);
            c.train.restart_t_mult = r.value("t_mult", c.train.restart_t_mult);
            c.train.restarts = r.value("count", c.train.restarts);
        }
        if (t.contains("cg")) {
            const json& g = t.at("cg");
            c.train.cg_tol = g.value("tol", c.train.cg_tol);
            c.train.cg_max_iters_ttn = g.value("max_iters_ttn", c.train.cg_max_iters_ttn);
            c.train.cg_max_iters_features =
                g.value("max_iters_features", c.train.cg_max_iters_features);
        }
        c.train.sweeps = t.value("sweeps", c.train.sweeps);
    }
    c.seed = j.value("seed", c.seed);
    c.realizations = j.value("realizations", c.realizations);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.subsample_fraction = j.value("subsample_fraction", c.subsample_fraction);
    // preprocessing default mirrors the benchmark protocol: deskew for the
    // multi-class task, raw pixels for binary pairs
    c.deskew = j.value("deskew", c.task.multiclass());
    if (j.contains("svm_c") && !j.at("svm_c").is_null())
        c.svm_c = j.at("svm_c").get<double>();
    c.export_features = j.value("export_features", c.export_features);
    c.shard_index = j.value("shard_index", c.shard_index);
    c.shard_count = j.value("shard_count", c.shard_count);
    c.threads = j.value("threads", c.threads);
    return c;
}

inline json RunConfig::to_json() const {
    json t;
    t["dataset"] = task.dataset;
    if (!task.labels.empty()) t["labels"] = task.labels;
    json tr;
    tr["batch_size"] = train.batch_size;
    tr["epochs"] = train.epochs;
    tr["optimizer"] = train.optimizer == Optimizer::Adam ? "adam"
                      : train.optimizer == Optimizer::AdamWRestarts ? "adamw-restarts"
                                                                    : "cg-sweeps";
    tr["learning_rate"] = train.learning_rate;
    tr["weight_decay"] = train.weight_decay;
    tr["restarts"] = {{"t0", train.restart_t0},
                      {"t_mult", train.restart_t_mult},
                      {"count", train.restarts}};
    tr["cg"] = {{"tol", train.cg_tol},
                {"max_iters_ttn", train.cg_max_iters_ttn},
                {"max_iters_features", train.cg_max_iters_features}};
    tr["sweeps"] = train.sweeps;
    json j;
    j["task"] = t;
    j["pipeline"] = pipeline;
    j["episodes"] = episodes;
    j["chi"] = chi;
    j["tied"] = tied;
    j["sparsity_r"] = sparsity_r;
    j["sigma"] = sigma;
    if (shots.is_exact())
        j["shots"] = "exact";
    else
        j["shots"] = *shots.n;
    j["multiclass_mode"] = multiclass_mode;
    j["train"] = tr;
    j["seed"] = seed;
    j["realizations"] = realizations;
    j["out_dir"] = out_dir;
    j["data_dir"] = data_dir;
    j["subsample_fraction"] = subsample_fraction;
    j["deskew"] = deskew;
    if (svm_c)
        j["svm_c"] = *svm_c;
    else
        j["svm_c"] = nullptr;
    j["export_features"] = export_features;
    j["shard_index"] = shard_index;
    j["shard_count"] = shard_count;
    j["threads"] = threads;
    return j;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read config file " + path);
    json j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    return RunConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Data resolution
// ---------------------------------------------------------------------------

struct FetchItem {
    std::string url;
    std::string filename;
};

// Download manifest per dataset; the fetch CLI subcommand is the only thing
// that touches the network, and only explicitly.
inline std::vector<FetchItem> fetch_manifest(const std::string& dataset) {
    std::string base;
    if (dataset == "mnist")
        base = "https://ossci-datasets.s3.amazonaws.com/mnist/";
    else if (dataset == "fashion-mnist")
        base = "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/";
    else
        throw config_error("unknown dataset '" + dataset + "'");
    std::vector<FetchItem> items;
    for (const char* name : {"train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                             "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"})
        items.push_back({base + name, name});
    return items;
}

inline std::string resolve_data_dir(const RunConfig& config) {
    if (!config.data_dir.empty()) return config.data_dir;
    if (const char* env = std::getenv("QKSTTN_DATA_DIR")) return env;
    throw config_error("no data directory: pass --data-dir / set data_dir in the "
                       "config / export QKSTTN_DATA_DIR (use `qksttn fetch` to "
                       "download a dataset first)");
}

namespace detail {

inline std::string find_idx_file(const std::filesystem::path& base,
                                 const std::string& stem) {
    for (const std::string& candidate : {stem, stem + ".gz"}) {
        std::filesystem::path p = base / candidate;
        if (std::filesystem::exists(p)) return p.string();
    }
    throw ingest_error("cannot find " + stem + "[.gz] under " + base.string());
}

}  // namespace detail

struct TaskData {
    Dataset train;
    Dataset test;
};

// Load, pair-filter and (for the multi-class pipeline) deskew the task data.
// Never downloads.
inline TaskData load_task_data(const RunConfig& config) {
    namespace fs = std::filesystem;
    fs::path base = fs::path(resolve_data_dir(config)) / config.task.dataset;
    TaskData data;
    data.train = load_idx(detail::find_idx_file(base, "train-images-idx3-ubyte"),
                          detail::find_idx_file(base, "train-labels-idx1-ubyte"));
    data.test = load_idx(detail::find_idx_file(base, "t10k-images-idx3-ubyte"),
                         detail::find_idx_file(base, "t10k-labels-idx1-ubyte"));
    if (!config.task.multiclass()) {
        data.train = filter_pair(data.train, config.task.labels[0], config.task.labels[1]);
        data.test = filter_pair(data.test, config.task.labels[0], config.task.labels[1]);
    }
    if (config.deskew) {
        Eigen::Index side = Eigen::Index(std::lround(std::sqrt(double(data.train.dim()))));
        data.train = deskew_all(data.train, side);
        data.test = deskew_all(data.test, side);
    }
    return data;
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

inline std::vector<int> ttn_predict(const TTNModel& model, const EncodingParams& enc,
                                    const std::vector<RVec>& xs, unsigned threads = 0) {
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
    return pred;
}

// Mean single-shot error probability 1 - p(correct | x).
inline double single_shot_error(const TTNModel& model, const EncodingParams& enc,
                                const std::vector<RVec>& xs, const std::vector<int>& ys,
                                unsigned threads = 0) {
    NodeOperators ops = build_operators(model);
    std::vector<double> p(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) {
        DensityMatrix root =
            contract_traced(model, ops, leaf_states(enc, xs[i], model.topology.chi)).root();
        p[i] = readout_probs(root, model.readout)[ys[i]];
    }, threads);
    double acc = 0;
    for (double v : p) acc += 1.0 - v;
    return acc / double(p.size());
}

// Per-example root readout probability vectors, the multi-shot feature.
inline RMat readout_prob_features(const TTNModel& model, const EncodingParams& enc,
                                  const std::vector<RVec>& xs, unsigned threads = 0) {
    NodeOperators ops = build_operators(model);
    RMat out(Eigen::Index(xs.size()), model.readout.num_classes());
    parallel_for(xs.size(), [&](std::size_t i) {
        DensityMatrix root =
            contract_traced(model, ops, leaf_states(enc, xs[i], model.topology.chi)).root();
        out.row(Eigen::Index(i)) = readout_probs(root, model.readout).transpose();
    }, threads);
    return out;
}

struct RealizationOutcome {
    int realization = 0;
    json final;
    std::vector<MetricsEntry> history;
    double wall_seconds = 0;
    bool has_model = false;
    TTNModel model;
    EncodingParams enc;
};

// Feature matrix as CSV (label column first) for external analysis.
inline void export_features_csv(const std::string& path, const RMat& features,
                                const std::vector<int>& labels) {
    CsvTable table;
    table.header.push_back("label");
    for (Eigen::Index e = 0; e < features.cols(); ++e)
        table.header.push_back("episode_" + std::to_string(e));
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(std::to_string(labels[i]));
        for (Eigen::Index e = 0; e < features.cols(); ++e)
            row.push_back(format_double(features(i, e)));
        table.rows.push_back(std::move(row));
    }
    std::ofstream out(path);
    if (!out) throw ingest_error("cannot write feature csv " + path);
    out << emit_csv(table);
}

namespace detail {

inline ReadoutSpec readout_for(const RunConfig& config, int num_classes) {
    if (!config.task.multiclass()) return ReadoutSpec::binary_qubit();
    if (config.multiclass_mode == "direct")
        return ReadoutSpec::direct_map(int(config.chi * config.chi), num_classes);
    throw config_error("one-vs-one multi-class runs through `qksttn benchmark`; "
                       "`run` supports pair tasks and direct multi-class");
}

inline Dataset realization_train_set(const RunConfig& config, const TaskData& data,
                                     Rng rng) {
    if (config.subsample_fraction >= 1.0) return data.train;
    return subsample(data.train, config.subsample_fraction, rng);
}

}  // namespace detail

inline RealizationOutcome run_one(const RunConfig& config, const TaskData& data,
                                  int realization,
                                  const EpochCallback& on_epoch = {}) {
    auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed_r = derive_seed(config.seed, 0x9000 + std::uint64_t(realization));
    RealizationOutcome out;
    out.realization = realization;

    Rng rng_sub(derive_seed(seed_r, 1));
    Dataset train = detail::realization_train_set(config, data, rng_sub);
    const Dataset& test = data.test;
    std::vector<RVec> train_xs = train.rows(), test_xs = test.rows();

    const Eigen::Index p = train.dim();
    const Eigen::Index r_nonzero =
        (config.sparsity_r > 0) ? std::min(config.sparsity_r, p) : p;
    Rng rng_enc(derive_seed(seed_r, 2));
    EncodingParams enc =
        init_encoding(config.episodes, p, r_nonzero, config.sigma, rng_enc);

    if (config.pipeline == "qks-svm") {
        Rng rng_feat(derive_seed(seed_r, 6));
        Rng rng_feat_test(derive_seed(seed_r, 7));
        RMat f_train = qks_features(enc, train_xs, config.shots, rng_feat, config.threads);
        RMat f_test = qks_features(enc, test_xs, config.shots, rng_feat_test, config.threads);
        Rng rng_c(derive_seed(seed_r, 5));
        double c = config.svm_c ? *config.svm_c
                                : select_C(f_train, train.y, rng_c, {}, kCvSvmOptions, config.threads);
        LinearModel svm = train_linear(f_train, train.y, c);
        out.final = {{"pipeline", config.pipeline},
                     {"train_error", evaluate(svm, f_train, train.y)},
                     {"test_error", evaluate(svm, f_test, test.y)},
                     {"c", c},
                     {"sigma", config.sigma},
                     {"train_size", train.size()}};
        if (config.export_features && !config.out_dir.empty()) {
            std::filesystem::create_directories(config.out_dir);
            std::string stem =
                config.out_dir + "/features_r" + std::to_string(realization);
            export_features_csv(stem + "_train.csv", f_train, train.y);
            export_features_csv(stem + "_test.csv", f_test, test.y);
        }
    } else {
        int num_classes = 1 + *std::max_element(train.y.begin(), train.y.end());
        ReadoutSpec readout = detail::readout_for(config, num_classes);
        Rng rng_ttn(derive_seed(seed_r, 3));
        TTNModel model =
            init_ttn(build_topology(config.episodes, config.chi), config.tied, rng_ttn,
                     readout);
        TrainConfig tc = config.train;
        tc.seed = derive_seed(seed_r, 4);
        tc.threads = config.threads;
        tc.feature_optimization =
            (config.pipeline == "qks-ttn-fo" || config.pipeline == "ablate");

        TrainResult trained;
        if (tc.optimizer == Optimizer::CgSweeps)
            trained = train_sweeps(model, enc, train_xs, train.y, tc, on_epoch);
        else
            trained = train_global(model, enc, train_xs, train.y, tc, nullptr, nullptr,
                                   on_epoch);
        out.history = trained.history;
        if (trained.diverged) {
            out.final = {{"pipeline", config.pipeline},
                         {"diverged", true},
                         {"diagnostic", trained.diagnostic}};
            auto t1 = std::chrono::steady_clock::now();
            out.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
            return out;
        }
        out.model = std::move(trained.model);
        out.enc = std::move(trained.enc);
        out.has_model = true;

        double train_error =
            error_rate(ttn_predict(out.model, out.enc, train_xs, config.threads), train.y);
        double test_error =
            error_rate(ttn_predict(out.model, out.enc, test_xs, config.threads), test.y);
        double test_pr =
            single_shot_error(out.model, out.enc, test_xs, test.y, config.threads);
        out.final = {{"pipeline", config.pipeline},
                     {"train_error", train_error},
                     {"test_error", test_error},
                     {"test_single_shot_error", test_pr},
                     {"sigma", config.sigma},
                     {"train_size", train.size()},
                     {"free_parameters", count_parameters(out.model, out.enc).total()}};

        if (!config.task.multiclass()) {
            // multi-shot classification: linear classifier on the root
            // readout probability vectors
            RMat pf_train =
                readout_prob_features(out.model, out.enc, train_xs, config.threads);
            RMat pf_test =
                readout_prob_features(out.model, out.enc, test_xs, config.threads);
            Rng rng_c(derive_seed(seed_r, 8));
            double c = config.svm_c
                           ? *config.svm_c
                           : select_C(pf_train, train.y, rng_c, {}, kCvSvmOptions, config.threads);
            LinearModel svm = train_linear(pf_train, train.y, c);
            out.final["test_multi_shot_error"] = evaluate(svm, pf_test, test.y);
        }

        if (config.pipeline == "ablate") {
            Rng rng_c(derive_seed(seed_r, 9));
            Rng dummy(0);
            RMat f_train =
                qks_features(out.enc, train_xs, Shots::exact(), dummy, config.threads);
            double c = config.svm_c
                           ? *config.svm_c
                           : select_C(f_train, train.y, rng_c, {}, kCvSvmOptions, config.threads);
            out.final["ablated_test_error"] = ablate_tn(
                out.enc, train_xs, train.y, test_xs, test.y, c, config.threads);
        }
    }
    auto t1 = std::chrono::steady_clock::now();
    out.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    return out;
}

// Execute the configured pipeline over all realizations in this shard,
// streaming the record to out_dir when set.
inline ExperimentRecord run(const RunConfig& config) {
    config.validate();
    TaskData data = load_task_data(config);

    ExperimentRecord record;
    record.config = config.to_json();
    std::optional<RecordWriter> writer;
    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
        std::string name = "record.ndjson";
        if (config.shard_count > 1)
            name = "record_shard" + std::to_string(config.shard_index) + "of" +
                   std::to_string(config.shard_count) + ".ndjson";
        writer.emplace(config.out_dir + "/" + name);
        writer->line({{"type", "config"}, {"config", record.config}});
    }

    std::vector<double> test_errors;
    for (int r = 0; r < config.realizations; ++r) {
        if (r % config.shard_count != config.shard_index) continue;
        EpochCallback stream = [&](const MetricsEntry& entry) {
            json line = {{"realization", r},
                         {"epoch", entry.epoch},
                         {"f", entry.train_f},
                         {"pr_error", entry.train_pr_error}};
            if (std::isfinite(entry.val_error)) line["val_error"] = entry.val_error;
            record.epochs.push_back(line);
            if (writer) {
                json disk = line;
                disk["type"] = "epoch";
                writer->line(disk);
            }
        };
        RealizationOutcome outcome = run_one(config, data, r, stream);
        json result = {{"realization", r},
                       {"final", outcome.final},
                       {"wall_clock_seconds", outcome.wall_seconds}};
        record.results.push_back(result);
        if (writer) {
            json disk = result;
            disk["type"] = "result";
            writer->line(disk);
        }
        if (outcome.final.contains("test_error"))
            test_errors.push_back(outcome.final["test_error"].get<double>());
        if (outcome.has_model && !config.out_dir.empty())
            save_model(config.out_dir + "/model_r" + std::to_string(r) + ".qks",
                       outcome.model, outcome.enc);
    }

    json digests = json::array();
    for (const auto& [path, digest] : data.train.provenance.source_digests)
        digests.push_back({{"path", path}, {"sha256", digest}});
    for (const auto& [path, digest] : data.test.provenance.source_digests)
        digests.push_back({{"path", path}, {"sha256", digest}});
    record.summary = {{"version", kVersion}, {"data_digests", digests}};
    if (!test_errors.empty()) {
        RealizationSummary s = summarize_realizations(test_errors);
        record.summary["test_error_median"] = s.median;
        record.summary["test_error_p16"] = s.p16;
        record.summary["test_error_p84"] = s.p84;
    }
    if (writer) writer->line({{"type", "summary"}, {"summary", record.summary}});
    return record;
}

// ---------------------------------------------------------------------------
// Hyperparameter grid search (sigma x episodes), 5-fold cross-validated
// error of the qks-svm pipeline per cell.
// ---------------------------------------------------------------------------

struct GridResult {
    CsvTable table;  // sigma, episodes, cv_error
    double best_sigma = 0;
    Eigen::Index best_episodes = 0;
    double best_error = 1.0;
};

inline GridResult grid_search(const RunConfig& base, const std::vector<double>& sigmas,
                              const std::vector<Eigen::Index>& episode_counts,
                              int folds = 5) {
    if (sigmas.empty() || episode_counts.empty())
        throw config_error("grid_search: empty grid");
    RunConfig config = base;
    config.validate();
    TaskData data = load_task_data(config);
    Rng fold_rng(derive_seed(config.seed, 0xF01D));
    auto fold_split = cv_folds(data.train, folds, fold_rng);

    GridResult out;
    out.table.header = {"sigma", "episodes", "cv_error"};
    struct Cell {
        double sigma;
        Eigen::Index episodes;
        double error;
    };
    std::vector<Cell> cells;
    for (double sigma : sigmas)
        for (Eigen::Index episodes : episode_counts)
            cells.push_back({sigma, episodes, 0.0});

    parallel_for(cells.size(), [&](std::size_t idx) {
        Cell& cell = cells[idx];
        const std::uint64_t cell_seed = derive_seed(config.seed, 0xCE11 + idx);
        double err_sum = 0;
        std::optional<double> c_shared = config.svm_c;
        for (int f = 0; f < folds; ++f) {
            Dataset train = take(data.train, fold_split[f].train_idx);
            Dataset val = take(data.train, fold_split[f].val_idx);
            Rng rng_enc(derive_seed(cell_seed, 10 + f));
            EncodingParams enc = init_encoding(
                cell.episodes, train.dim(),
                config.sparsity_r > 0 ? std::min(config.sparsity_r, train.dim())
                                      : train.dim(),
                cell.sigma, rng_enc);
            Rng rng_feat(derive_seed(cell_seed, 20 + f));
            Rng rng_feat_val(derive_seed(cell_seed, 30 + f));
            RMat f_train =
                qks_features(enc, train.rows(), config.shots, rng_feat, config.threads);
            RMat f_val =
                qks_features(enc, val.rows(), config.shots, rng_feat_val, config.threads);
            if (!c_shared) {
                Rng rng_c(derive_seed(cell_seed, 40));
                c_shared = select_C(f_train, train.y, rng_c, {}, kCvSvmOptions, config.threads);
            }
            LinearModel svm = train_linear(f_train, train.y, *c_shared);
            err_sum += evaluate(svm, f_val, val.y);
        }
        cell.error = err_sum / double(folds);
    }, 1);  // cells run serially; inner stages already parallelize

    for (const Cell& cell : cells) {
        out.table.rows.push_back({format_double(cell.sigma),
                                  std::to_string(cell.episodes),
                                  format_double(cell.error)});
        if (cell.error < out.best_error) {
            out.best_error = cell.error;
            out.best_sigma = cell.sigma;
            out.best_episodes = cell.episodes;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset-fraction scaling study with the power-law fit.
// ---------------------------------------------------------------------------

struct ScalingResult {
    std::vector<double> fractions;
    std::vector<double> median_errors;
    PowerLawFit fit;
    CsvTable curve;  // fraction, median_error, p16, p84
};

inline ScalingResult scaling_study(const RunConfig& base,
                                   const std::vector<double>& fractions) {
    if (fractions.size() < 2)
        throw config_error("scaling_study: need at least two fractions");
    ScalingResult out;
    out.curve.header = {"fraction", "median_error", "p16", "p84"};
    RunConfig probe = base;
    probe.pipeline = "qks-svm";
    probe.out_dir.clear();
    probe.validate();
    TaskData data = load_task_data(probe);
    for (double f : fractions) {
        RunConfig config = probe;
        config.subsample_fraction = f;
        config.seed = derive_seed(base.seed, std::uint64_t(1e6 * f) + 0xF2AC);
        std::vector<double> errors;
        for (int r = 0; r < config.realizations; ++r)
            errors.push_back(
                run_one(config, data, r).final.at("test_error").get<double>());
        RealizationSummary s = summarize_realizations(errors);
        out.fractions.push_back(f);
        out.median_errors.push_back(s.median);
        out.curve.rows.push_back({format_double(f), format_double(s.median),
                                  format_double(s.p16), format_double(s.p84)});
    }
    out.fit = fit_power_law(out.fractions, out.median_errors);
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark matrices: pairwise binary errors plus the aggregated
// multi-class error (one-vs-one voting, or the direct 16-outcome readout).
// ---------------------------------------------------------------------------

struct BenchmarkResult {
    std::vector<int> classes;
    std::vector<std::vector<double>> pairwise_error;  // NaN on/above the diagonal
    double multiclass_error = std::numeric_limits<double>::quiet_NaN();
    CsvTable table;  // class_a, class_b, error
};

inline BenchmarkResult benchmark_matrix(const RunConfig& base) {
    RunConfig config = base;
    config.validate();
    TaskData data = load_task_data(config);

    BenchmarkResult out;
    out.table.header = {"class_a", "class_b", "error"};

    if (!config.task.multiclass()) {
        // pair task: a single cell, equal to run's test error
        out.classes = {std::min(config.task.labels[0], config.task.labels[1]),
                       std::max(config.task.labels[0], config.task.labels[1])};
        out.pairwise_error.assign(
            2, std::vector<double>(2, std::numeric_limits<double>::quiet_NaN()));
        double err = run_one(config, data, 0).final.at("test_error").get<double>();
        out.pairwise_error[1][0] = err;
        out.multiclass_error = err;
        out.table.rows.push_back({std::to_string(out.classes[0]),
                                  std::to_string(out.classes[1]), format_double(err)});
        return out;
    }

    std::set<int> class_set(data.train.y.begin(), data.train.y.end());
    out.classes.assign(class_set.begin(), class_set.end());
    const int k = int(out.classes.size());
    out.pairwise_error.assign(k, std::vector<double>(
                                     k, std::numeric_limits<double>::quiet_NaN()));

    auto record_pair = [&](int ia, int ib, double err) {
        out.pairwise_error[std::max(ia, ib)][std::min(ia, ib)] = err;
        out.table.rows.push_back({std::to_string(out.classes[std::min(ia, ib)]),
                                  std::to_string(out.classes[std::max(ia, ib)]),
                                  format_double(err)});
    };

    if (config.pipeline == "qks-svm") {
        // one encoding, one feature pass, per-pair linear classifiers
        const std::uint64_t seed_r = derive_seed(config.seed, 0x9000);
        Rng rng_sub(derive_seed(seed_r, 1));
        Dataset train = detail::realization_train_set(config, data, rng_sub);
        Rng rng_enc(derive_seed(seed_r, 2));
        const Eigen::Index p = train.dim();
        EncodingParams enc = init_encoding(
            config.episodes, p,
            config.sparsity_r > 0 ? std::min(config.sparsity_r, p) : p, config.sigma,
            rng_enc);
        Rng rng_feat(derive_seed(seed_r, 6)), rng_feat_test(derive_seed(seed_r, 7));
        RMat f_train =
            qks_features(enc, train.rows(), config.shots, rng_feat, config.threads);
        RMat f_test = qks_features(enc, data.test.rows(), config.shots, rng_feat_test,
                                   config.threads);
        Rng rng_c(derive_seed(seed_r, 5));
        double c = config.svm_c ? *config.svm_c
                                : select_C(f_train, train.y, rng_c, {}, kCvSvmOptions, config.threads);
        OvOEnsemble ens = ovo_train(f_train, train.y, c, {}, config.threads);
        for (std::size_t pi = 0; pi < ens.pairs.size(); ++pi) {
            auto [a, b] = ens.pairs[pi];
            std::vector<Eigen::Index> idx;
            for (Eigen::Index i = 0; i < data.test.size(); ++i)
                if (data.test.y[i] == a || data.test.y[i] == b) idx.push_back(i);
            RMat sub(Eigen::Index(idx.size()), f_test.cols());
            std::vector<int> sub_y(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                sub.row(Eigen::Index(i)) = f_test.row(idx[i]);
                sub_y[i] = (data.test.y[idx[i]] == b) ? 1 : 0;
            }
            int ia = int(std::find(out.classes.begin(), out.classes.end(), a) -
                         out.classes.begin());
            int ib = int(std::find(out.classes.begin(), out.classes.end(), b) -
                         out.classes.begin());
            record_pair(ia, ib, evaluate(ens.models[pi], sub, sub_y));
        }
        if (k > 2)
            out.multiclass_error = error_rate(ovo_predict(ens, f_test), data.test.y);
        else
            out.multiclass_error = out.pairwise_error[1][0];
        return out;
    }

    if (config.task.multiclass() && config.multiclass_mode == "direct") {
        RealizationOutcome outcome = run_one(config, data, 0);
        out.multiclass_error = outcome.final.at("test_error").get<double>();
        std::vector<int> pred =
            ttn_predict(outcome.model, outcome.enc, data.test.rows(), config.threads);
        for (int ia = 0; ia < k; ++ia)
            for (int ib = ia + 1; ib < k; ++ib) {
                int a = out.classes[ia], b = out.classes[ib];
                Eigen::Index wrong = 0, total = 0;
                for (Eigen::Index i = 0; i < data.test.size(); ++i) {
                    if (data.test.y[i] != a && data.test.y[i] != b) continue;
                    ++total;
                    if (pred[i] != data.test.y[i]) ++wrong;
                }
                record_pair(ia, ib, total ? double(wrong) / double(total) : 0.0);
            }
        return out;
    }

    // one-vs-one over trained tree models: each pair task runs its own
    // pipeline, then votes on the full test set
    std::vector<std::vector<int>> winners(data.test.size(),
                                          std::vector<int>());
    for (auto& w : winners) w.reserve(std::size_t(k) * (k - 1) / 2);
    for (int ia = 0; ia < k; ++ia)
        for (int ib = ia + 1; ib < k; ++ib) {
            int a = out.classes[ia], b = out.classes[ib];
            RunConfig pair_config = config;
            pair_config.task.labels = {a, b};
            pair_config.seed = derive_seed(config.seed, 0xA000 + 100 * ia + ib);
            TaskData pair_data;
            pair_data.train = filter_pair(data.train, a, b);
            pair_data.test = filter_pair(data.test, a, b);
            RealizationOutcome outcome = run_one(pair_config, pair_data, 0);
            record_pair(ia, ib, outcome.final.at("test_error").get<double>());
            if (k > 2) {
                std::vector<int> pred = ttn_predict(outcome.model, outcome.enc,
                                                    data.test.rows(), config.threads);
                for (Eigen::Index i = 0; i < data.test.size(); ++i)
                    winners[i].push_back(pred[i] == 0 ? a : b);
            }
        }
    if (k > 2) {
        std::vector<int> voted(data.test.size());
        for (Eigen::Index i = 0; i < data.test.size(); ++i)
            voted[i] = ovo_vote(winners[i]);
        out.multiclass_error = error_rate(voted, data.test.y);
    } else {
        out.multiclass_error = out.pairwise_error[1][0];
    }
    return out;
}

}  // namespace qksttn

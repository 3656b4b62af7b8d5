// Command-line harness: dataset fetching, single runs, hyperparameter grid
// search, dataset-fraction scaling studies, benchmark matrices, the
// tensor-network ablation, and static plot emission.

#include "qksttn/experiment.hpp"
#include "qksttn/sha256.hpp"

// httplib drags in <resolv.h>, whose `_res` macro corrupts Eigen headers;
// keep it after every Eigen include and scrub the macro.
#include <CLI11.hpp>
#include <httplib.h>
#ifdef _res
#undef _res
#endif

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace qksttn;

namespace {

struct Overrides {
    std::string config_path;
    std::string data_dir;
    std::string out_dir;
    std::int64_t seed = -1;
    std::string shard;  // "i/n"
    unsigned threads = 0;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "run configuration (JSON)")->required();
    cmd->add_option("--data-dir", o.data_dir,
                    "dataset directory (default: QKSTTN_DATA_DIR)");
    cmd->add_option("--out", o.out_dir, "output directory for records and artifacts");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--shard", o.shard, "run only realizations r with r%%n == i (i/n)");
    cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
}

RunConfig resolve_config(const Overrides& o) {
    RunConfig config = load_config(o.config_path);
    if (!o.data_dir.empty()) config.data_dir = o.data_dir;
    if (!o.out_dir.empty()) config.out_dir = o.out_dir;
    if (o.seed >= 0) config.seed = std::uint64_t(o.seed);
    if (o.threads != 0) config.threads = o.threads;
    if (!o.shard.empty()) {
        auto slash = o.shard.find('/');
        if (slash == std::string::npos)
            throw config_error("--shard expects i/n, e.g. 0/4");
        config.shard_index = std::stoi(o.shard.substr(0, slash));
        config.shard_count = std::stoi(o.shard.substr(slash + 1));
    }
    return config;
}

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ingest_error("cannot write " + path.string());
    out << text;
}

int do_fetch(const std::string& dataset, const std::string& data_dir) {
    fs::path target = fs::path(data_dir) / dataset;
    fs::create_directories(target);
    json digests = json::object();
    for (const FetchItem& item : fetch_manifest(dataset)) {
        std::cout << "fetching " << item.url << "\n";
        auto scheme_end = item.url.find("://");
        std::string scheme = item.url.substr(0, scheme_end);
        std::string rest = item.url.substr(scheme_end + 3);
        auto path_start = rest.find('/');
        std::string host = rest.substr(0, path_start);
        std::string path = rest.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
        if (scheme == "https")
            throw ingest_error("built without TLS support; download " + item.url +
                               " manually into " + target.string());
#endif
        httplib::Client client((scheme + "://" + host).c_str());
        client.set_follow_location(true);
        client.set_read_timeout(120, 0);
        auto res = client.Get(path.c_str());
        if (!res || res->status != 200)
            throw ingest_error("download failed for " + item.url + " (status " +
                               (res ? std::to_string(res->status) : "none") + ")");
        fs::path file = target / item.filename;
        write_text(file, res->body);
        std::string digest = sha256_file(file.string());
        digests[item.filename] = digest;
        std::cout << "  -> " << file.string() << "  sha256=" << digest << "\n";
    }
    write_text(target / "digests.json", digests.dump(2) + "\n");
    return 0;
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::istringstream in(csv);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(std::stod(cell));
    return out;
}

std::vector<Eigen::Index> parse_indices(const std::string& csv) {
    std::vector<Eigen::Index> out;
    std::istringstream in(csv);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(std::stoll(cell));
    return out;
}

void print_summary(const ExperimentRecord& record) {
    for (const json& result : record.results)
        std::cout << "realization " << result["realization"] << ": "
                  << result["final"].dump() << "\n";
    if (!record.summary.is_null())
        std::cout << "summary: " << record.summary.dump() << "\n";
}

int do_plot_records(const std::vector<std::string>& record_paths,
                    const std::string& out_dir) {
    if (record_paths.empty()) {
        std::cerr << "plot: no records given; nothing to do\n";
        return 0;
    }
    std::map<std::string, CurveSeries> by_pipeline;
    for (const std::string& path : record_paths) {
        ExperimentRecord record = load_record(path);
        std::string pipeline = record.config.value("pipeline", "run");
        double episodes = double(record.config.value("episodes", 0));
        std::vector<double> errors;
        for (const json& result : record.results)
            if (result["final"].contains("test_error"))
                errors.push_back(result["final"]["test_error"].get<double>());
        if (errors.empty()) continue;
        CurveSeries& series = by_pipeline[pipeline];
        series.name = pipeline;
        series.x.push_back(episodes);
        series.y_samples.push_back(errors);
    }
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::vector<CurveSeries> all;
    int color = 0;
    for (auto& [name, series] : by_pipeline) {
        std::vector<std::size_t> order(series.x.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return series.x[a] < series.x[b];
        });
        CurveSeries sorted = series;
        for (std::size_t i = 0; i < order.size(); ++i) {
            sorted.x[i] = series.x[order[i]];
            sorted.y_samples[i] = series.y_samples[order[i]];
        }
        sorted.color = palette[color++ % 4];
        all.push_back(std::move(sorted));
    }
    write_text(fs::path(out_dir) / "error_curves.svg", svg_line_chart(all));
    std::cout << "wrote " << (fs::path(out_dir) / "error_curves.svg").string() << "\n";
    return 0;
}

int do_plot_matrix(const std::string& csv_path, const std::string& out_dir) {
    std::ifstream in(csv_path);
    if (!in) throw ingest_error("cannot read " + csv_path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    CsvTable table = parse_csv(text);
    std::set<int> class_set;
    for (const auto& row : table.rows) {
        class_set.insert(std::stoi(row[0]));
        class_set.insert(std::stoi(row[1]));
    }
    std::vector<int> classes(class_set.begin(), class_set.end());
    std::vector<std::string> labels;
    for (int c : classes) labels.push_back(std::to_string(c));
    const int k = int(classes.size());
    std::vector<std::vector<double>> matrix(
        k, std::vector<double>(k, std::numeric_limits<double>::quiet_NaN()));
    auto index_of = [&](int c) {
        return int(std::find(classes.begin(), classes.end(), c) - classes.begin());
    };
    for (const auto& row : table.rows) {
        int a = index_of(std::stoi(row[0])), b = index_of(std::stoi(row[1]));
        matrix[std::max(a, b)][std::min(a, b)] = std::stod(row[2]);
    }
    write_text(fs::path(out_dir) / "error_matrix.svg", svg_heatmap(matrix, labels));
    std::cout << "wrote " << (fs::path(out_dir) / "error_matrix.svg").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantum-kitchen-sink + tree-tensor-network classifier harness"};
    app.require_subcommand(1);

    auto* fetch = app.add_subcommand("fetch", "download a dataset and record digests");
    std::string fetch_dataset = "mnist", fetch_dir;
    fetch->add_option("--dataset", fetch_dataset, "mnist or fashion-mnist");
    fetch->add_option("--data-dir", fetch_dir, "target directory")->required();

    Overrides run_o;
    auto* run_cmd = app.add_subcommand("run", "execute one configured pipeline");
    add_common(run_cmd, run_o);

    Overrides grid_o;
    std::string grid_sigmas = "0.01,0.1,1", grid_episodes = "100,1000";
    int grid_folds = 5;
    auto* grid_cmd =
        app.add_subcommand("grid-search", "cross-validated sigma/episode grid");
    add_common(grid_cmd, grid_o);
    grid_cmd->add_option("--sigmas", grid_sigmas, "comma-separated sigma values");
    grid_cmd->add_option("--episodes", grid_episodes, "comma-separated episode counts");
    grid_cmd->add_option("--folds", grid_folds, "cross-validation folds");

    Overrides scaling_o;
    std::string scaling_fractions = "1,0.1,0.01";
    auto* scaling_cmd =
        app.add_subcommand("scaling", "dataset-fraction study with power-law fit");
    add_common(scaling_cmd, scaling_o);
    scaling_cmd->add_option("--fractions", scaling_fractions,
                            "comma-separated training fractions");

    Overrides bench_o;
    auto* bench_cmd =
        app.add_subcommand("benchmark", "pairwise error matrix and multi-class error");
    add_common(bench_cmd, bench_o);

    Overrides ablate_o;
    auto* ablate_cmd = app.add_subcommand(
        "ablate", "train with feature optimization, then drop the tensor network");
    add_common(ablate_cmd, ablate_o);

    std::vector<std::string> plot_records;
    std::string plot_matrix, plot_out = ".";
    auto* plot_cmd = app.add_subcommand("plot", "emit SVG figures from records");
    plot_cmd->add_option("--records", plot_records, "record.ndjson files");
    plot_cmd->add_option("--matrix", plot_matrix, "benchmark CSV for a heatmap");
    plot_cmd->add_option("--out", plot_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fetch) return do_fetch(fetch_dataset, fetch_dir);
        if (*run_cmd) {
            ExperimentRecord record = run(resolve_config(run_o));
            print_summary(record);
            return 0;
        }
        if (*grid_cmd) {
            RunConfig config = resolve_config(grid_o);
            GridResult grid = grid_search(config, parse_doubles(grid_sigmas),
                                          parse_indices(grid_episodes), grid_folds);
            std::string csv = emit_csv(grid.table);
            std::cout << csv;
            std::cout << "best: sigma=" << grid.best_sigma
                      << " episodes=" << grid.best_episodes
                      << " cv_error=" << grid.best_error << "\n";
            if (!config.out_dir.empty())
                write_text(fs::path(config.out_dir) / "grid_search.csv", csv);
            return 0;
        }
        if (*scaling_cmd) {
            RunConfig config = resolve_config(scaling_o);
            ScalingResult s = scaling_study(config, parse_doubles(scaling_fractions));
            std::cout << emit_csv(s.curve);
            std::cout << "fit: a=" << s.fit.a << " +- " << s.fit.sigma_a
                      << ", b=" << s.fit.b << " +- " << s.fit.sigma_b << "\n";
            if (!config.out_dir.empty())
                write_text(fs::path(config.out_dir) / "scaling.csv", emit_csv(s.curve));
            return 0;
        }
        if (*bench_cmd) {
            RunConfig config = resolve_config(bench_o);
            BenchmarkResult b = benchmark_matrix(config);
            std::cout << emit_csv(b.table);
            std::cout << "multiclass_error=" << b.multiclass_error << "\n";
            if (!config.out_dir.empty())
                write_text(fs::path(config.out_dir) / "benchmark.csv",
                           emit_csv(b.table));
            return 0;
        }
        if (*ablate_cmd) {
            RunConfig config = resolve_config(ablate_o);
            config.pipeline = "ablate";
            ExperimentRecord record = run(config);
            print_summary(record);
            return 0;
        }
        if (*plot_cmd) {
            int rc = 0;
            if (!plot_records.empty() || plot_matrix.empty())
                rc = do_plot_records(plot_records, plot_out);
            if (!plot_matrix.empty()) rc |= do_plot_matrix(plot_matrix, plot_out);
            return rc;
        }
    } catch (const config_error& e) {
        std::cerr << "error (config): " << e.what() << "\n";
        return 2;
    } catch (const ingest_error& e) {
        std::cerr << "error (data): " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

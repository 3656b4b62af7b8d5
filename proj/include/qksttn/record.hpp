#pragma once

// Run records as NDJSON: one self-describing JSON object per line, appended
// as the run progresses (config first, then per-epoch metrics, then one
// result per realization, finally a summary). parse(emit(x)) == x.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qksttn/common.hpp"

namespace qksttn {

using json = nlohmann::json;

struct ExperimentRecord {
    json config;
    std::vector<json> epochs;   // {"realization", "epoch", "f", "pr_error", ...}
    std::vector<json> results;  // {"realization", "final": {...}, "wall_clock_seconds"}
    json summary;               // medians, percentiles, digests

    bool operator==(const ExperimentRecord& other) const = default;
};

inline std::string emit_record(const ExperimentRecord& record) {
    std::ostringstream out;
    out << json{{"type", "config"}, {"config", record.config}}.dump() << "\n";
    for (const json& e : record.epochs) {
        json line = e;
        line["type"] = "epoch";
        out << line.dump() << "\n";
    }
    for (const json& r : record.results) {
        json line = r;
        line["type"] = "result";
        out << line.dump() << "\n";
    }
    if (!record.summary.is_null())
        out << json{{"type", "summary"}, {"summary", record.summary}}.dump() << "\n";
    return out.str();
}

inline ExperimentRecord parse_record(const std::string& text) {
    ExperimentRecord record;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json obj = json::parse(line);
        std::string type = obj.value("type", "");
        if (type == "config") {
            record.config = obj.at("config");
        } else if (type == "epoch") {
            obj.erase("type");
            record.epochs.push_back(obj);
        } else if (type == "result") {
            obj.erase("type");
            record.results.push_back(obj);
        } else if (type == "summary") {
            record.summary = obj.at("summary");
        } else {
            throw ingest_error("record line with unknown type: " + line);
        }
    }
    return record;
}

inline ExperimentRecord load_record(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ingest_error("cannot read record file " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return parse_record(text);
}

// Streaming writer so metrics land on disk as they are produced. The file
// is truncated at open: one run invocation owns one record file, and lines
// are only ever appended within it.
class RecordWriter {
  public:
    explicit RecordWriter(const std::string& path)
        : out_(path, std::ios::trunc) {
        if (!out_) throw ingest_error("cannot open record file " + path);
    }
    void line(json obj) {
        out_ << obj.dump() << "\n";
        out_.flush();
    }

  private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Small CSV table (for grid-search and benchmark outputs). Cells never
// contain commas or newlines, so no quoting is needed.
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    bool operator==(const CsvTable&) const = default;
};

inline std::string emit_csv(const CsvTable& table) {
    std::ostringstream out;
    for (std::size_t i = 0; i < table.header.size(); ++i)
        out << (i ? "," : "") << table.header[i];
    out << "\n";
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
    return out.str();
}

inline CsvTable parse_csv(const std::string& text) {
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (first) {
            table.header = cells;
            first = false;
        } else {
            table.rows.push_back(cells);
        }
    }
    return table;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// Median and the 68% central interval (16th/84th percentiles, linear
// interpolation on sorted values) across realizations.
struct RealizationSummary {
    double median = 0, p16 = 0, p84 = 0;
};

inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw domain_error("quantile of empty sample");
    std::sort(values.begin(), values.end());
    double pos = q * double(values.size() - 1);
    std::size_t lo = std::size_t(std::floor(pos));
    std::size_t hi = std::min(values.size() - 1, lo + 1);
    double t = pos - double(lo);
    return (1 - t) * values[lo] + t * values[hi];
}

inline RealizationSummary summarize_realizations(const std::vector<double>& values) {
    return {quantile(values, 0.5), quantile(values, 0.16), quantile(values, 0.84)};
}

}  // namespace qksttn

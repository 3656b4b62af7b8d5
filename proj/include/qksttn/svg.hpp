#pragma once

// Static SVG figure emission: error curves (median line plus the 16th-84th
// percentile band over realizations, log-scaled x) and error-matrix
// heatmaps. Plain strings, fixed float formatting, byte-deterministic for
// fixed input.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "qksttn/record.hpp"

namespace qksttn {

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace detail

struct CurveSeries {
    std::string name;
    std::string color = "#1f77b4";
    std::vector<double> x;                        // shared axis values (e.g. episodes)
    std::vector<std::vector<double>> y_samples;   // per x: values across realizations
};

struct ChartOptions {
    int width = 640, height = 480;
    int margin = 56;
    bool log_x = true;
    std::string x_label = "episodes";
    std::string y_label = "test error";
};

// Median + percentile-band line chart over realizations.
inline std::string svg_line_chart(const std::vector<CurveSeries>& series,
                                  const ChartOptions& opt = {}) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width
        << "\" height=\"" << opt.height << "\" viewBox=\"0 0 " << opt.width << " "
        << opt.height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (series.empty()) {
        out << "</svg>\n";
        return out.str();
    }

    double x_lo = 1e300, x_hi = -1e300, y_lo = 0.0, y_hi = -1e300;
    std::vector<std::vector<RealizationSummary>> stats(series.size());
    for (std::size_t s = 0; s < series.size(); ++s) {
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            double xv = opt.log_x ? std::log10(series[s].x[i]) : series[s].x[i];
            x_lo = std::min(x_lo, xv);
            x_hi = std::max(x_hi, xv);
            RealizationSummary st = summarize_realizations(series[s].y_samples[i]);
            stats[s].push_back(st);
            y_hi = std::max(y_hi, st.p84);
        }
    }
    if (x_hi <= x_lo) x_hi = x_lo + 1;
    if (y_hi <= y_lo) y_hi = y_lo + 1;
    y_hi *= 1.05;

    auto px = [&](double xv) {
        double t = ((opt.log_x ? std::log10(xv) : xv) - x_lo) / (x_hi - x_lo);
        return opt.margin + t * (opt.width - 2 * opt.margin);
    };
    auto py = [&](double yv) {
        double t = (yv - y_lo) / (y_hi - y_lo);
        return opt.height - opt.margin - t * (opt.height - 2 * opt.margin);
    };

    // axes
    out << "<line x1=\"" << opt.margin << "\" y1=\"" << opt.height - opt.margin
        << "\" x2=\"" << opt.width - opt.margin << "\" y2=\""
        << opt.height - opt.margin << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << opt.margin << "\" y1=\"" << opt.margin << "\" x2=\""
        << opt.margin << "\" y2=\"" << opt.height - opt.margin
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << opt.width / 2 << "\" y=\"" << opt.height - 12
        << "\" font-size=\"13\" text-anchor=\"middle\">" << opt.x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << opt.height / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << opt.height / 2 << ")\">" << opt.y_label << "</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double yv = y_lo + (y_hi - y_lo) * tick / 4.0;
        out << "<text x=\"" << opt.margin - 6 << "\" y=\"" << detail::fmt(py(yv) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << detail::fmt(yv)
            << "</text>\n";
    }

    for (std::size_t s = 0; s < series.size(); ++s) {
        const CurveSeries& cs = series[s];
        // percentile band
        out << "<path d=\"M";
        for (std::size_t i = 0; i < cs.x.size(); ++i)
            out << (i ? " L" : "") << detail::fmt(px(cs.x[i])) << " "
                << detail::fmt(py(stats[s][i].p16));
        for (std::size_t i = cs.x.size(); i-- > 0;)
            out << " L" << detail::fmt(px(cs.x[i])) << " "
                << detail::fmt(py(stats[s][i].p84));
        out << " Z\" fill=\"" << cs.color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
        // median polyline
        out << "<polyline fill=\"none\" stroke=\"" << cs.color
            << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < cs.x.size(); ++i)
            out << (i ? " " : "") << detail::fmt(px(cs.x[i])) << ","
                << detail::fmt(py(stats[s][i].median));
        out << "\"/>\n";
        // x tick labels from the first series
        if (s == 0)
            for (std::size_t i = 0; i < cs.x.size(); ++i)
                out << "<text x=\"" << detail::fmt(px(cs.x[i])) << "\" y=\""
                    << opt.height - opt.margin + 16
                    << "\" font-size=\"11\" text-anchor=\"middle\">"
                    << detail::fmt(cs.x[i]) << "</text>\n";
        // legend
        out << "<rect x=\"" << opt.width - opt.margin - 150 << "\" y=\""
            << opt.margin + 18 * int(s) << "\" width=\"12\" height=\"12\" fill=\""
            << cs.color << "\"/>\n";
        out << "<text x=\"" << opt.width - opt.margin - 132 << "\" y=\""
            << opt.margin + 18 * int(s) + 10 << "\" font-size=\"12\">" << cs.name
            << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

// Error-matrix heatmap (e.g. pairwise benchmark errors). NaN cells are
// left blank.
inline std::string svg_heatmap(const std::vector<std::vector<double>>& matrix,
                               const std::vector<std::string>& labels,
                               const std::string& title = "pairwise test error") {
    const int n = int(matrix.size());
    const int cell = 40, margin = 70;
    const int size = margin + n * cell + 20;
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size
        << "\" height=\"" << size << "\" viewBox=\"0 0 " << size << " " << size
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << size / 2
        << "\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">" << title
        << "</text>\n";
    double hi = 1e-12;
    for (const auto& row : matrix)
        for (double v : row)
            if (std::isfinite(v)) hi = std::max(hi, v);
    for (int i = 0; i < n; ++i) {
        out << "<text x=\"" << margin - 8 << "\" y=\"" << margin + i * cell + cell / 2 + 4
            << "\" font-size=\"12\" text-anchor=\"end\">" << labels[i] << "</text>\n";
        out << "<text x=\"" << margin + i * cell + cell / 2 << "\" y=\"" << margin - 8
            << "\" font-size=\"12\" text-anchor=\"middle\">" << labels[i] << "</text>\n";
        for (int j = 0; j < n; ++j) {
            double v = matrix[i][j];
            if (!std::isfinite(v)) continue;
            int shade = int(255.0 * (1.0 - v / hi));
            out << "<rect x=\"" << margin + j * cell << "\" y=\"" << margin + i * cell
                << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(255,"
                << shade << "," << shade << ")\" stroke=\"#ccc\"/>\n";
            out << "<text x=\"" << margin + j * cell + cell / 2 << "\" y=\""
                << margin + i * cell + cell / 2 + 4
                << "\" font-size=\"10\" text-anchor=\"middle\">" << detail::fmt(v)
                << "</text>\n";
        }
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace qksttn

// Copyright 2026 The spectwin authors
// Static SVG line charts for metrics CSVs and sweep summaries.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spectwin/common.hpp"

namespace spectwin {

struct Series {
    std::string label;
    std::vector<double> x, y;
};

/// Write a simple multi-series line chart. Axis ranges are data-driven.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::string& x_label, const std::string& y_label,
                            const std::vector<Series>& series) {
    const int width = 860, height = 520;
    const int ml = 70, mr = 30, mt = 50, mb = 60;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const auto& s : series) {
        for (const double v : s.x) {
            x_min = std::min(x_min, v);
            x_max = std::max(x_max, v);
        }
        for (const double v : s.y) {
            y_min = std::min(y_min, v);
            y_max = std::max(y_max, v);
        }
    }
    if (x_min > x_max) {
        x_min = 0;
        x_max = 1;
    }
    if (y_min > y_max) {
        y_min = 0;
        y_max = 1;
    }
    if (x_max == x_min) x_max = x_min + 1;
    if (y_max == y_min) y_max = y_min + 1;
    const double y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * plot_w; };
    auto py = [&](double y) { return mt + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf"};

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << ' ' << height << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << width / 2 << "' y='28' font-size='18' text-anchor='middle' "
        << "font-family='sans-serif'>" << title << "</text>\n";

    // axes + ticks
    svg << "<line x1='" << ml << "' y1='" << mt + plot_h << "' x2='" << ml + plot_w << "' y2='"
        << mt + plot_h << "' stroke='black'/>\n";
    svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + plot_h
        << "' stroke='black'/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x_min + (x_max - x_min) * i / 5.0;
        const double yv = y_min + (y_max - y_min) * i / 5.0;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", xv);
        svg << "<text x='" << px(xv) << "' y='" << mt + plot_h + 20
            << "' font-size='11' text-anchor='middle' font-family='sans-serif'>" << buf
            << "</text>\n";
        std::snprintf(buf, sizeof(buf), "%.4g", yv);
        svg << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
            << "' font-size='11' text-anchor='end' font-family='sans-serif'>" << buf
            << "</text>\n";
        svg << "<line x1='" << ml << "' y1='" << py(yv) << "' x2='" << ml + plot_w << "' y2='"
            << py(yv) << "' stroke='#e0e0e0'/>\n";
    }
    svg << "<text x='" << ml + plot_w / 2 << "' y='" << height - 14
        << "' font-size='13' text-anchor='middle' font-family='sans-serif'>" << x_label
        << "</text>\n";
    svg << "<text x='18' y='" << mt + plot_h / 2
        << "' font-size='13' text-anchor='middle' font-family='sans-serif' transform='rotate(-90 "
        << 18 << ' ' << mt + plot_h / 2 << ")'>" << y_label << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = colors[si % 7];
        svg << "<polyline fill='none' stroke='" << color << "' stroke-width='1.6' points='";
        for (size_t i = 0; i < s.x.size(); ++i)
            svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        svg << "'/>\n";
        svg << "<text x='" << ml + plot_w - 6 << "' y='" << mt + 16 + 16 * static_cast<int>(si)
            << "' font-size='12' text-anchor='end' fill='" << color
            << "' font-family='sans-serif'>" << s.label << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path);
    if (!out) throw data_error("plot: cannot write " + path);
    out << svg.str();
}

/// Parse a metrics CSV (header + numeric rows) into named columns.
inline std::vector<std::pair<std::string, std::vector<double>>> read_csv_columns(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("plot: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw data_error("plot: empty csv " + path);
    std::vector<std::pair<std::string, std::vector<double>>> cols;
    {
        std::istringstream hs(line);
        std::string name;
        while (std::getline(hs, name, ',')) cols.emplace_back(name, std::vector<double>{});
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        size_t idx = 0;
        while (std::getline(ls, cell, ',') && idx < cols.size())
            cols[idx++].second.push_back(std::stod(cell));
    }
    return cols;
}

/// Loss-vs-step chart from a training metrics CSV.
inline void plot_metrics_csv(const std::string& csv_path, const std::string& out_svg) {
    const auto cols = read_csv_columns(csv_path);
    const std::vector<double>* step = nullptr;
    std::vector<Series> series;
    for (const auto& [name, values] : cols)
        if (name == "step") step = &values;
    if (!step) throw data_error("plot: metrics csv has no 'step' column");
    for (const auto& [name, values] : cols) {
        if (name.rfind("loss_", 0) != 0) continue;
        Series s;
        s.label = name;
        s.x = *step;
        s.y = values;
        series.push_back(std::move(s));
    }
    write_svg_chart(out_svg, "training loss", "step", "loss", series);
}

}  // namespace spectwin

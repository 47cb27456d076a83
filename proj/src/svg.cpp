// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace hopscotch::svg {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

const char* color(std::size_t i) {
    return kPalette[i % (sizeof kPalette / sizeof kPalette[0])];
}

struct Range {
    double lo = 0, hi = 1;
    void pad() {
        if (!(hi > lo)) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

std::string header(const ChartLabels& labels) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
                    "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(labels.title) + "</text>\n";
    const double px = kLeft + (kWidth - kLeft - kRight) / 2;
    s += "<text x=\"" + num(px) + "\" y=\"" + num(kHeight - 10) + "\" text-anchor=\"middle\">" + escape(labels.x_label) + "</text>\n";
    const double py = kTop + (kHeight - kTop - kBottom) / 2;
    s += "<text x=\"16\" y=\"" + num(py) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " + num(py) + ")\">" +
         escape(labels.y_label) + "</text>\n";
    return s;
}

std::string y_axis(const Range& y) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    std::string s = "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) + "\" y2=\"" + num(y0) +
                    "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = y.lo + (y.hi - y.lo) * i / 4.0;
        const double py = y0 - (y0 - y1) * i / 4.0;
        s += "<line x1=\"" + num(x0 - 4) + "\" y1=\"" + num(py) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(py) + "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\">" + tick_label(v) + "</text>\n";
    }
    return s;
}

std::string legend(const std::vector<std::string>& names) {
    std::string s;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = kTop + 10 + 18.0 * static_cast<double>(i);
        const double x = kWidth - kRight + 12;
        s += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 9) + "\" width=\"12\" height=\"10\" fill=\"" + color(i) + "\"/>\n";
        s += "<text x=\"" + num(x + 18) + "\" y=\"" + num(y) + "\">" + escape(names[i]) + "</text>\n";
    }
    return s;
}

}  // namespace

std::string escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string line_chart(const ChartLabels& labels, const std::vector<Series>& series) {
    Range xr{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    Range yr = xr;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            xr.lo = std::min(xr.lo, x);
            xr.hi = std::max(xr.hi, x);
            yr.lo = std::min(yr.lo, y);
            yr.hi = std::max(yr.hi, y);
        }
    if (!std::isfinite(xr.lo)) xr = {0, 1};
    if (!std::isfinite(yr.lo)) yr = {0, 1};
    xr.pad();
    yr.pad();
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    auto px = [&](double x) { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
    auto py = [&](double y) { return y0 - (y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

    std::string s = header(labels) + y_axis(yr);
    for (int i = 0; i <= 4; ++i) {
        const double v = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        s += "<text x=\"" + num(px(v)) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\">" + tick_label(v) + "</text>\n";
    }
    std::vector<std::string> names;
    for (std::size_t i = 0; i < series.size(); ++i) {
        names.push_back(series[i].name);
        std::string pts;
        for (const auto& [x, y] : series[i].points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (!pts.empty()) pts += ' ';
            pts += num(px(x)) + "," + num(py(y));
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color(i)) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        for (const auto& [x, y] : series[i].points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            s += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) + "\" r=\"3\" fill=\"" + color(i) + "\"/>\n";
        }
    }
    return s + legend(names) + "</svg>\n";
}

std::string bar_chart(const ChartLabels& labels, const std::vector<std::string>& series_names,
                      const std::vector<BarGroup>& groups) {
    Range yr{0, 0};
    for (const auto& g : groups)
        for (double v : g.values)
            if (std::isfinite(v)) yr.hi = std::max(yr.hi, v);
    if (yr.hi <= 0) yr.hi = 1;
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    auto py = [&](double y) { return y0 - (y - yr.lo) / (yr.hi - yr.lo) * (y0 - y1); };

    std::string s = header(labels) + y_axis(yr);
    const double slot = groups.empty() ? 0 : (x1 - x0) / static_cast<double>(groups.size());
    const double bar = series_names.empty() ? 0 : slot * 0.8 / static_cast<double>(series_names.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const double gx = x0 + slot * static_cast<double>(gi) + slot * 0.1;
        for (std::size_t si = 0; si < groups[gi].values.size() && si < series_names.size(); ++si) {
            const double v = std::isfinite(groups[gi].values[si]) ? std::max(0.0, groups[gi].values[si]) : 0.0;
            const double top = py(v);
            s += "<rect x=\"" + num(gx + bar * static_cast<double>(si)) + "\" y=\"" + num(top) + "\" width=\"" + num(bar) +
                 "\" height=\"" + num(y0 - top) + "\" fill=\"" + color(si) + "\"/>\n";
        }
        s += "<text x=\"" + num(gx + slot * 0.4) + "\" y=\"" + num(y0 + 16) + "\" text-anchor=\"middle\">" +
             escape(groups[gi].category) + "</text>\n";
    }
    return s + legend(series_names) + "</svg>\n";
}

}  // namespace hopscotch::svg

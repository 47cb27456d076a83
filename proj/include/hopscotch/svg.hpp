// SPDX-License-Identifier: Apache-2.0
//
// Minimal SVG charts: axes, ticks, polylines, grouped bars.
#pragma once

#include <string>
#include <utility>
#include <vector>

namespace hopscotch::svg {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct ChartLabels {
    std::string title;
    std::string x_label;
    std::string y_label;
};

std::string line_chart(const ChartLabels& labels, const std::vector<Series>& series);

struct BarGroup {
    std::string category;
    std::vector<double> values;  // one per series name
};

std::string bar_chart(const ChartLabels& labels, const std::vector<std::string>& series_names,
                      const std::vector<BarGroup>& groups);

/// Escapes &, <, >, " for text nodes and attributes.
std::string escape(const std::string& text);

}  // namespace hopscotch::svg

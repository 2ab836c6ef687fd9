#pragma once

#include <string>
#include <vector>

namespace dive {

// Minimal standalone SVG bar charts for the evaluation report. Output is
// deterministic: fixed layout, fixed palette, fixed number formatting.

struct BarGroup {
    std::string label;
    std::vector<double> values;  // one per series
};

struct BarChart {
    std::string title;
    std::vector<std::string> series;  // legend entries
    std::vector<BarGroup> groups;
    double y_max = 100.0;
    std::string y_label = "percent";
};

std::string render_bar_chart(const BarChart& chart);
void save_bar_chart(const BarChart& chart, const std::string& path);

}  // namespace dive

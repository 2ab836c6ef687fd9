#include "dive/svg.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dive/error.hpp"

namespace dive {

namespace {

const char* kPalette[] = {"#4878cf", "#ee854a", "#6acc65", "#d65f5f",
                          "#956cb4", "#8c613c", "#dc7ec0", "#797979"};
constexpr int kPaletteSize = 8;

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
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

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

}  // namespace

std::string render_bar_chart(const BarChart& chart) {
    if (chart.groups.empty()) throw ArgumentError("render_bar_chart: no groups");
    if (chart.series.empty()) throw ArgumentError("render_bar_chart: no series");
    if (!(chart.y_max > 0.0)) throw ArgumentError("render_bar_chart: y_max must be positive");
    for (const auto& g : chart.groups) {
        if (g.values.size() != chart.series.size()) {
            throw ArgumentError("render_bar_chart: group " + g.label + " has " +
                                std::to_string(g.values.size()) + " values, expected " +
                                std::to_string(chart.series.size()));
        }
        for (double v : g.values) {
            if (!std::isfinite(v)) {
                throw ArgumentError("render_bar_chart: non-finite value in group " + g.label);
            }
        }
    }

    const int n_groups = static_cast<int>(chart.groups.size());
    const int n_series = static_cast<int>(chart.series.size());
    const double bar_w = 22.0;
    const double bar_gap = 4.0;
    const double group_gap = 30.0;
    const double group_w = n_series * bar_w + (n_series - 1) * bar_gap;
    const double margin_l = 60.0, margin_r = 30.0, margin_t = 50.0, margin_b = 70.0;
    const double plot_h = 260.0;
    const double plot_w = n_groups * group_w + (n_groups + 1) * group_gap;
    const double width = margin_l + plot_w + margin_r;
    const double height = margin_t + plot_h + margin_b;
    const double base_y = margin_t + plot_h;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
        << num(height) << "\" viewBox=\"0 0 " << num(width) << " " << num(height) << "\">\n";
    svg << "<rect width=\"" << num(width) << "\" height=\"" << num(height)
        << "\" fill=\"#ffffff\"/>\n";
    svg << "<text x=\"" << num(width / 2) << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << escape_xml(chart.title)
        << "</text>\n";

    for (int tick = 0; tick <= 4; ++tick) {
        const double frac = tick / 4.0;
        const double y = base_y - frac * plot_h;
        svg << "<line x1=\"" << num(margin_l) << "\" y1=\"" << num(y) << "\" x2=\""
            << num(margin_l + plot_w) << "\" y2=\"" << num(y)
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << num(margin_l - 8) << "\" y=\"" << num(y + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << num(frac * chart.y_max) << "</text>\n";
    }
    svg << "<text x=\"16\" y=\"" << num(margin_t + plot_h / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << num(margin_t + plot_h / 2) << ")\">"
        << escape_xml(chart.y_label) << "</text>\n";

    for (int g = 0; g < n_groups; ++g) {
        const double gx = margin_l + group_gap + g * (group_w + group_gap);
        const auto& group = chart.groups[static_cast<std::size_t>(g)];
        for (int s = 0; s < n_series; ++s) {
            const double v = std::max(0.0, std::min(group.values[static_cast<std::size_t>(s)],
                                                    chart.y_max));
            const double h = v / chart.y_max * plot_h;
            const double x = gx + s * (bar_w + bar_gap);
            svg << "<rect x=\"" << num(x) << "\" y=\"" << num(base_y - h) << "\" width=\""
                << num(bar_w) << "\" height=\"" << num(h) << "\" fill=\""
                << kPalette[s % kPaletteSize] << "\"/>\n";
            svg << "<text x=\"" << num(x + bar_w / 2) << "\" y=\"" << num(base_y - h - 4)
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
                << num(group.values[static_cast<std::size_t>(s)]) << "</text>\n";
        }
        svg << "<text x=\"" << num(gx + group_w / 2) << "\" y=\"" << num(base_y + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
            << escape_xml(group.label) << "</text>\n";
    }

    const double legend_y = base_y + 40.0;
    double lx = margin_l;
    for (int s = 0; s < n_series; ++s) {
        svg << "<rect x=\"" << num(lx) << "\" y=\"" << num(legend_y - 10) << "\" width=\"12\" "
            << "height=\"12\" fill=\"" << kPalette[s % kPaletteSize] << "\"/>\n";
        svg << "<text x=\"" << num(lx + 17) << "\" y=\"" << num(legend_y)
            << "\" font-family=\"sans-serif\" font-size=\"12\">"
            << escape_xml(chart.series[static_cast<std::size_t>(s)]) << "</text>\n";
        lx += 17.0 + 8.0 * static_cast<double>(chart.series[static_cast<std::size_t>(s)].size()) +
              24.0;
    }

    svg << "</svg>\n";
    return svg.str();
}

void save_bar_chart(const BarChart& chart, const std::string& path) {
    const std::string body = render_bar_chart(chart);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("save_bar_chart: cannot open " + path);
    out << body;
    if (!out) throw Error("save_bar_chart: write failed for " + path);
}

}  // namespace dive

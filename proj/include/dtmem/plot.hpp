#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dtmem/common.hpp"

namespace dtmem {

// Hand-rolled SVG emission, enough for the evaluation bar charts and the
// memory-size sweep curve.
namespace svg {

struct Series {
    std::string name;
    std::vector<double> values;
};

inline constexpr const char* kPalette[] = {"#4878cf", "#e1812c", "#3a923a", "#c03d3e"};

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

// Grouped bar chart with a zero baseline; handles negative values.
inline void bar_chart(const std::string& path, const std::string& title,
                      const std::vector<std::string>& categories,
                      const std::vector<Series>& series) {
    if (series.empty() || categories.empty()) throw ContractError("bar_chart: empty input");
    for (const Series& s : series)
        if (s.values.size() != categories.size())
            throw ContractError("bar_chart: series '" + s.name + "' length mismatch");

    const double width = 720, height = 420;
    const double left = 70, right = 30, top = 50, bottom = 60;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double lo = 0.0, hi = 0.0;
    for (const Series& s : series)
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi == lo) hi = lo + 1.0;
    const double pad = 0.08 * (hi - lo);
    hi += pad;
    if (lo < 0) lo -= pad;
    auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"26\" text-anchor=\"middle\" font-size=\"16\" "
           "font-family=\"sans-serif\">"
        << escape(title) << "</text>\n";

    // horizontal grid + labels
    for (int g = 0; g <= 4; ++g) {
        const double v = lo + (hi - lo) * g / 4.0;
        const double y = y_of(v);
        out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w
            << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
        std::ostringstream lab;
        lab.precision(3);
        lab << v;
        out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << lab.str()
            << "</text>\n";
    }
    // zero line
    if (lo < 0 && hi > 0)
        out << "<line x1=\"" << left << "\" y1=\"" << y_of(0) << "\" x2=\"" << left + plot_w
            << "\" y2=\"" << y_of(0) << "\" stroke=\"#888888\"/>\n";

    const double group_w = plot_w / static_cast<double>(categories.size());
    const double bar_w = group_w * 0.8 / static_cast<double>(series.size());
    for (std::size_t c = 0; c < categories.size(); ++c) {
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = std::clamp(series[s].values[c], lo, hi);
            const double x = left + group_w * static_cast<double>(c) + group_w * 0.1 +
                             bar_w * static_cast<double>(s);
            const double base = y_of(std::clamp(0.0, lo, hi));
            const double ytop = v >= 0 ? y_of(v) : base;
            const double hh = std::abs(base - y_of(v));
            out << "<rect x=\"" << x << "\" y=\"" << ytop << "\" width=\"" << bar_w * 0.92
                << "\" height=\"" << std::max(0.5, hh) << "\" fill=\""
                << kPalette[s % 4] << "\"/>\n";
        }
        out << "<text x=\"" << left + group_w * (static_cast<double>(c) + 0.5) << "\" y=\""
            << height - bottom + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
            << escape(categories[c]) << "</text>\n";
    }
    // legend
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double x = left + 10 + 150 * static_cast<double>(s);
        out << "<rect x=\"" << x << "\" y=\"" << height - 24 << "\" width=\"12\" height=\"12\" fill=\""
            << kPalette[s % 4] << "\"/>\n";
        out << "<text x=\"" << x + 18 << "\" y=\"" << height - 13
            << "\" font-size=\"12\" font-family=\"sans-serif\">" << escape(series[s].name)
            << "</text>\n";
    }
    out << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << out.str();
}

// Single-series line chart (x on a categorical axis).
inline void line_chart(const std::string& path, const std::string& title,
                       const std::vector<double>& xs, const std::vector<double>& ys,
                       const std::string& x_label, const std::string& y_label) {
    if (xs.size() != ys.size() || xs.empty()) throw ContractError("line_chart: bad input");
    const double width = 720, height = 420;
    const double left = 70, right = 30, top = 50, bottom = 60;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double ylo = ys[0], yhi = ys[0];
    for (double v : ys) {
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
    }
    if (yhi == ylo) yhi = ylo + 1.0;
    const double pad = 0.1 * (yhi - ylo);
    ylo -= pad;
    yhi += pad;
    double xlo = xs.front(), xhi = xs.back();
    for (double v : xs) {
        xlo = std::min(xlo, v);
        xhi = std::max(xhi, v);
    }
    if (xhi == xlo) xhi = xlo + 1.0;

    auto x_of = [&](double v) { return left + plot_w * (v - xlo) / (xhi - xlo); };
    auto y_of = [&](double v) { return top + plot_h * (yhi - v) / (yhi - ylo); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"26\" text-anchor=\"middle\" font-size=\"16\" "
           "font-family=\"sans-serif\">"
        << escape(title) << "</text>\n";
    for (int g = 0; g <= 4; ++g) {
        const double v = ylo + (yhi - ylo) * g / 4.0;
        out << "<line x1=\"" << left << "\" y1=\"" << y_of(v) << "\" x2=\"" << left + plot_w
            << "\" y2=\"" << y_of(v) << "\" stroke=\"#dddddd\"/>\n";
        std::ostringstream lab;
        lab.precision(3);
        lab << v;
        out << "<text x=\"" << left - 8 << "\" y=\"" << y_of(v) + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << lab.str()
            << "</text>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << kPalette[0] << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) out << x_of(xs[i]) << "," << y_of(ys[i]) << " ";
    out << "\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out << "<circle cx=\"" << x_of(xs[i]) << "\" cy=\"" << y_of(ys[i])
            << "\" r=\"4\" fill=\"" << kPalette[1] << "\"/>\n";
        std::ostringstream lab;
        lab << xs[i];
        out << "<text x=\"" << x_of(xs[i]) << "\" y=\"" << height - bottom + 18
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
            << lab.str() << "</text>\n";
    }
    out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">"
        << escape(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << top + plot_h / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
           "transform=\"rotate(-90 16 "
        << top + plot_h / 2 << ")\">" << escape(y_label) << "</text>\n";
    out << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << out.str();
}

}  // namespace svg
}  // namespace dtmem

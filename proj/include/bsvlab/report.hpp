#pragma once

// Plain-text artifacts: CSV tables (%.17g, so reruns are byte-identical)
// and small self-contained SVG line plots.

#include <string>
#include <vector>

namespace bsvlab {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    std::string to_csv() const;
};

/// Shortest round-trip-safe decimal form.
std::string fmt(double v);

struct PlotSeries {
    std::string label;
    std::vector<double> y;
    std::vector<double> band_low;   ///< optional, same length as y
    std::vector<double> band_high;
};

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                          const std::vector<PlotSeries>& series);

void write_text(const std::string& path, const std::string& content);

}  // namespace bsvlab

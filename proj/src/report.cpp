#include "bsvlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bsvlab {
namespace {

const char* const kPalette[] = {"#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#555555"};

std::string escape_xml(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void Table::add_row(std::vector<std::string> row)
{
    if (row.size() != header.size()) {
        throw std::invalid_argument("table row width does not match header");
    }
    rows.push_back(std::move(row));
}

std::string Table::to_csv() const
{
    std::ostringstream os;
    const auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            os << (i ? "," : "") << csv_field(r[i]);
        }
        os << '\n';
    };
    line(header);
    for (const auto& r : rows) {
        line(r);
    }
    return os.str();
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                          const std::vector<PlotSeries>& series)
{
    const double w = 640, h = 400, ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (double v : x) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    for (const auto& s : series) {
        for (const auto* vec : {&s.y, &s.band_low, &s.band_high}) {
            for (double v : *vec) {
                if (std::isfinite(v)) {
                    ymin = std::min(ymin, v);
                    ymax = std::max(ymax, v);
                }
            }
        }
    }
    if (!(xmax > xmin)) {
        xmax = xmin + 1.0;
    }
    if (!std::isfinite(ymin)) {
        ymin = 0.0;
        ymax = 1.0;
    }
    if (!(ymax > ymin)) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const auto px = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (w - ml - mr); };
    const auto py = [&](double v) { return h - mb - (v - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
       << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape_xml(title)
       << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    }
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">" << escape_xml(x_label)
       << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& ser = series[s];
        const char* colour = kPalette[s % (sizeof kPalette / sizeof kPalette[0])];
        const std::size_t n = std::min(x.size(), ser.y.size());
        if (ser.band_low.size() == n && ser.band_high.size() == n && n > 0) {
            os << "<polygon fill=\"" << colour << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < n; ++i) {
                os << px(x[i]) << ',' << py(ser.band_high[i]) << ' ';
            }
            for (std::size_t i = n; i-- > 0;) {
                os << px(x[i]) << ',' << py(ser.band_low[i]) << ' ';
            }
            os << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < n; ++i) {
            os << px(x[i]) << ',' << py(ser.y[i]) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << w - mr - 4 << "\" y=\"" << mt + 14 * (s + 1) << "\" text-anchor=\"end\" fill=\""
           << colour << "\">" << escape_xml(ser.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_text(const std::string& path, const std::string& content)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write " + path);
    }
    f << content;
    if (!f) {
        throw std::runtime_error("write failed for " + path);
    }
}

}  // namespace bsvlab

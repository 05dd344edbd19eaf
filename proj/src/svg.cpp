#include "softq/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace softq {

namespace {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

std::string basename(const std::string& path) {
    const size_t slash = path.find_last_of('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

double parse_number(const std::string& s, const std::string& where) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": non-numeric value '" + s + "'");
    }
}

/// Round-number ticks covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target) {
    if (!(hi > lo)) {
        const double pad = std::max(1.0, std::abs(lo)) * 0.5;
        lo -= pad;
        hi += pad;
    }
    const double raw = (hi - lo) / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double mult : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * mult >= raw) {
            step = mag * mult;
            break;
        }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step)
        ticks.push_back(t);
    return ticks;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

void render_line_chart(const std::vector<std::string>& csv_paths, const PlotSpec& spec,
                       const std::string& out_svg) {
    if (csv_paths.empty()) throw ParseError("plot: no input CSV files");
    std::vector<Series> series;
    for (const auto& path : csv_paths) {
        CsvTable table = read_csv(path);
        const int xi = table.column_index(spec.x_col);
        const int yi = table.column_index(spec.y_col);
        if (xi < 0) throw ParseError(path + ": missing column '" + spec.x_col + "'");
        if (yi < 0) throw ParseError(path + ": missing column '" + spec.y_col + "'");
        if (table.rows.empty()) throw ParseError(path + ": CSV has no data rows");
        Series s;
        s.name = basename(path);
        for (const auto& row : table.rows) {
            double x = parse_number(row[xi], path);
            double y = parse_number(row[yi], path);
            if (spec.log_x) {
                if (!(x > 0.0)) throw ParseError(path + ": log x-axis needs positive values");
                x = std::log10(x);
            }
            if (spec.log_y) {
                if (!(y > 0.0)) throw ParseError(path + ": log y-axis needs positive values");
                y = std::log10(y);
            }
            s.x.push_back(x);
            s.y.push_back(y);
        }
        series.push_back(std::move(s));
    }

    double xlo = series[0].x[0], xhi = xlo, ylo = series[0].y[0], yhi = ylo;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, s.y[i]);
            yhi = std::max(yhi, s.y[i]);
        }
    if (!(xhi > xlo)) {
        xlo -= 0.5;
        xhi += 0.5;
    }
    if (!(yhi > ylo)) {
        ylo -= 0.5;
        yhi += 0.5;
    }

    const double width = 800, height = 500;
    const double ml = 70, mr = 160, mt = 40, mb = 55;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto px = [&](double x) { return ml + (x - xlo) / (xhi - xlo) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ylo) / (yhi - ylo) * ph; };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!spec.title.empty())
        svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
            << "font-family=\"sans-serif\" font-size=\"16\">" << spec.title << "</text>\n";

    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    for (double t : nice_ticks(xlo, xhi, 6)) {
        const double x = px(t);
        svg << "<line x1=\"" << x << "\" y1=\"" << mt + ph << "\" x2=\"" << x << "\" y2=\""
            << mt + ph + 5 << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << x << "\" y=\"" << mt + ph + 20
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << (spec.log_x ? "1e" + fmt_tick(t) : fmt_tick(t)) << "</text>\n";
    }
    for (double t : nice_ticks(ylo, yhi, 6)) {
        const double y = py(t);
        svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << (spec.log_y ? "1e" + fmt_tick(t) : fmt_tick(t)) << "</text>\n";
    }
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << spec.x_col
        << (spec.log_x ? " (log)" : "") << "</text>\n";
    svg << "<text x=\"18\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << spec.y_col
        << (spec.log_y ? " (log)" : "") << "</text>\n";

    for (size_t k = 0; k < series.size(); ++k) {
        const char* color = palette[k % 8];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < series[k].x.size(); ++i)
            svg << px(series[k].x[i]) << "," << py(series[k].y[i]) << " ";
        svg << "\"/>\n";
        const double ly = mt + 16 + 18 * (double)k;
        svg << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 34
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[k].name << "</text>\n";
    }
    svg << "</svg>\n";
    write_text_file(out_svg, svg.str());
}

}  // namespace softq

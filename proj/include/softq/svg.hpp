#pragma once

#include <string>
#include <vector>

#include "softq/io.hpp"

namespace softq {

struct PlotSpec {
    std::string x_col;
    std::string y_col;
    bool log_x = false;
    bool log_y = false;
    std::string title;
};

/// One polyline per CSV file, legend from the file names. Throws ParseError
/// on missing columns, empty bodies, or non-positive values on log axes;
/// nothing is written in that case.
void render_line_chart(const std::vector<std::string>& csv_paths, const PlotSpec& spec,
                       const std::string& out_svg);

}  // namespace softq

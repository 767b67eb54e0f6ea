#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

// Minimal scatter/line plot rasterizer for rate-distortion curves. Just
// enough to eyeball results without pulling in a plotting stack: axes,
// tick labels from a tiny builtin digit font, one polyline per series.
namespace fasdiff::media {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

void write_plot_png(const std::string& path, const std::vector<PlotSeries>& series,
                    const std::string& x_label, const std::string& y_label, int64_t width = 560,
                    int64_t height = 400);

}  // namespace fasdiff::media

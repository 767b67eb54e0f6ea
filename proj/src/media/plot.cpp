#include "media/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "core/error.hpp"
#include "media/image.hpp"

namespace fasdiff::media {

namespace {

// 3x5 glyphs for "0123456789.-eE+", one bit per pixel, row-major
struct Glyph {
    char ch;
    uint16_t rows[5];
};

const Glyph kGlyphs[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b010, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'.', {0b000, 0b000, 0b000, 0b000, 0b010}}, {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
    {'e', {0b000, 0b111, 0b110, 0b100, 0b111}}, {'E', {0b111, 0b100, 0b110, 0b100, 0b111}},
    {'+', {0b000, 0b010, 0b111, 0b010, 0b000}},
};

const Glyph* find_glyph(char c) {
    for (const auto& g : kGlyphs)
        if (g.ch == c) return &g;
    return nullptr;
}

struct Raster {
    Tensor<float>& img;
    int64_t h, w;

    void put(int64_t y, int64_t x, float r, float g, float b) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        img.at3(0, y, x) = r;
        img.at3(1, y, x) = g;
        img.at3(2, y, x) = b;
    }

    void line(double y0, double x0, double y1, double x1, float r, float g, float b) {
        double len = std::max(std::abs(y1 - y0), std::abs(x1 - x0));
        int steps = std::max(1, static_cast<int>(std::ceil(len)));
        for (int i = 0; i <= steps; ++i) {
            double t = static_cast<double>(i) / steps;
            put(static_cast<int64_t>(std::lround(y0 + (y1 - y0) * t)),
                static_cast<int64_t>(std::lround(x0 + (x1 - x0) * t)), r, g, b);
        }
    }

    void marker(int64_t y, int64_t x, float r, float g, float b) {
        for (int64_t dy = -1; dy <= 1; ++dy)
            for (int64_t dx = -1; dx <= 1; ++dx) put(y + dy, x + dx, r, g, b);
    }

    void text(int64_t y, int64_t x, const std::string& s, float r, float g, float b) {
        for (char c : s) {
            const Glyph* gl = find_glyph(c);
            if (gl) {
                for (int64_t row = 0; row < 5; ++row)
                    for (int64_t col = 0; col < 3; ++col)
                        if (gl->rows[row] & (1 << (2 - col))) put(y + row, x + col, r, g, b);
            }
            x += 4;
        }
    }
};

std::string format_tick(double v) {
    char buf[32];
    if (v != 0.0 && (std::abs(v) < 0.01 || std::abs(v) >= 10000.0))
        std::snprintf(buf, sizeof(buf), "%.1e", v);
    else
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

const float kPalette[][3] = {
    {0.85f, 0.15f, 0.15f}, {0.15f, 0.35f, 0.85f}, {0.10f, 0.60f, 0.25f},
    {0.80f, 0.55f, 0.10f}, {0.55f, 0.20f, 0.70f}, {0.10f, 0.60f, 0.60f},
};

}  // namespace

void write_plot_png(const std::string& path, const std::vector<PlotSeries>& series,
                    const std::string& x_label, const std::string& y_label, int64_t width,
                    int64_t height) {
    check_arg(!series.empty(), "plot needs at least one series");
    double xmin = std::numeric_limits<double>::max(), xmax = std::numeric_limits<double>::lowest();
    double ymin = xmin, ymax = xmax;
    for (const auto& s : series) {
        check_arg(s.x.size() == s.y.size() && !s.x.empty(), "plot series needs matching x/y");
        for (double v : s.x) {
            xmin = std::min(xmin, v);
            xmax = std::max(xmax, v);
        }
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    Tensor<float> canvas(Shape{3, height, width}, 1.0f);
    Raster r{canvas, height, width};
    const int64_t ml = 56, mr = 14, mt = 14, mb = 36;  // margins
    int64_t px0 = ml, px1 = width - mr, py0 = height - mb, py1 = mt;

    auto to_px = [&](double x, double y) {
        double fx = (x - xmin) / (xmax - xmin);
        double fy = (y - ymin) / (ymax - ymin);
        return std::make_pair(py0 + (py1 - py0) * fy, px0 + (px1 - px0) * fx);
    };

    // axes and ticks
    r.line(py0, px0, py0, px1, 0, 0, 0);
    r.line(py0, px0, py1, px0, 0, 0, 0);
    for (int i = 0; i <= 4; ++i) {
        double fx = xmin + (xmax - xmin) * i / 4.0;
        double fy = ymin + (ymax - ymin) * i / 4.0;
        auto [ty, tx] = to_px(fx, ymin);
        r.line(ty, tx, ty + 4, tx, 0, 0, 0);
        r.text(ty + 7, tx - 10, format_tick(fx), 0, 0, 0);
        auto [ly, lx] = to_px(xmin, fy);
        r.line(ly, lx - 4, ly, lx, 0, 0, 0);
        r.text(ly - 2, 8, format_tick(fy), 0, 0, 0);
    }
    r.text(height - 10, px0 + (px1 - px0) / 2 - static_cast<int64_t>(x_label.size()) * 2, x_label, 0, 0, 0);
    r.text(2, 8, y_label, 0, 0, 0);

    for (size_t si = 0; si < series.size(); ++si) {
        const float* col = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        const auto& s = series[si];
        for (size_t i = 0; i < s.x.size(); ++i) {
            auto [y, x] = to_px(s.x[i], s.y[i]);
            r.marker(static_cast<int64_t>(y), static_cast<int64_t>(x), col[0], col[1], col[2]);
            if (i > 0) {
                auto [yp, xp] = to_px(s.x[i - 1], s.y[i - 1]);
                r.line(yp, xp, y, x, col[0], col[1], col[2]);
            }
        }
        // legend swatch, top right corner
        int64_t ly = mt + 4 + static_cast<int64_t>(si) * 8;
        r.marker(ly, px1 - 60, col[0], col[1], col[2]);
        r.text(ly - 2, px1 - 54, s.label.substr(0, 12), 0, 0, 0);
    }
    write_png(path, canvas);
}

}  // namespace fasdiff::media

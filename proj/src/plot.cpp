#include "lnm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

namespace lnm::plot {

Canvas::Canvas(int width, int height, Rgb background)
    : width_(width), height_(height), pixels_(size_t(width) * size_t(height), background) {}

void Canvas::set(int x, int y, Rgb colour) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    pixels_[size_t(y) * size_t(width_) + size_t(x)] = colour;
}

Rgb Canvas::get(int x, int y) const { return pixels_.at(size_t(y) * size_t(width_) + size_t(x)); }

void Canvas::line(int x0, int y0, int x1, int y1, Rgb colour) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        set(x0, y0, colour);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void Canvas::blit(const Image& image, int x, int y, int scale) {
    for (int r = 0; r < image.height(); ++r) {
        for (int c = 0; c < image.width(); ++c) {
            const auto v = std::uint8_t(std::lround(255.0 * std::clamp(double(image(r, c)), 0.0, 1.0)));
            for (int i = 0; i < scale; ++i) {
                for (int j = 0; j < scale; ++j) set(x + c * scale + j, y + r * scale + i, {v, v, v});
            }
        }
    }
}

void write_ppm(const Canvas& canvas, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P6\n" << canvas.width() << ' ' << canvas.height() << "\n255\n";
    for (int y = 0; y < canvas.height(); ++y) {
        for (int x = 0; x < canvas.width(); ++x) {
            const auto p = canvas.get(x, y);
            out.write(reinterpret_cast<const char*>(p.data()), 3);
        }
    }
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
    for (float v : image.values()) out.put(char(std::lround(255.0 * std::clamp(double(v), 0.0, 1.0))));
}

Canvas line_chart(const std::vector<Series>& series, int width, int height, bool fixed_unit_range) {
    Canvas canvas(width, height);
    const int margin = 24;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (fixed_unit_range) {
        xmin = ymin = 0.0;
        xmax = ymax = 1.0;
    }
    if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;

    const Rgb axis{0, 0, 0};
    const int x0 = margin, y0 = height - margin, x1 = width - margin, y1 = margin;
    canvas.line(x0, y0, x1, y0, axis);
    canvas.line(x0, y0, x0, y1, axis);
    auto px = [&](double x) { return x0 + int(std::lround((x - xmin) / (xmax - xmin) * (x1 - x0))); };
    auto py = [&](double y) { return y0 - int(std::lround((y - ymin) / (ymax - ymin) * (y0 - y1))); };
    for (const auto& s : series) {
        bool have_prev = false;
        int prev_x = 0, prev_y = 0;
        for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                have_prev = false;
                continue;
            }
            const int cx = px(s.x[i]), cy = py(s.y[i]);
            if (have_prev) canvas.line(prev_x, prev_y, cx, cy, s.colour);
            else canvas.set(cx, cy, s.colour);
            prev_x = cx;
            prev_y = cy;
            have_prev = true;
        }
    }
    return canvas;
}

Canvas image_grid(const std::vector<Image>& images, int columns, int scale, int gap) {
    const int cell = kPatchSize * scale;
    const int cols = std::max(1, std::min(columns, int(images.size())));
    const int rows = std::max(1, int((images.size() + size_t(cols) - 1) / size_t(cols)));
    Canvas canvas(cols * (cell + gap) + gap, rows * (cell + gap) + gap, {40, 40, 40});
    for (size_t i = 0; i < images.size(); ++i) {
        const int r = int(i) / cols, c = int(i) % cols;
        canvas.blit(images[i], gap + c * (cell + gap), gap + r * (cell + gap), scale);
    }
    return canvas;
}

}  // namespace lnm::plot

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lnm/common.hpp"

namespace lnm::plot {

using Rgb = std::array<std::uint8_t, 3>;

class Canvas {
 public:
    Canvas(int width, int height, Rgb background = {255, 255, 255});

    int width() const { return width_; }
    int height() const { return height_; }
    void set(int x, int y, Rgb colour);
    Rgb get(int x, int y) const;
    void line(int x0, int y0, int x1, int y1, Rgb colour);
    /// Pastes an image scaled by an integer factor, top-left at (x, y).
    void blit(const Image& image, int x, int y, int scale = 1);

 private:
    int width_, height_;
    std::vector<Rgb> pixels_;
};

void write_ppm(const Canvas& canvas, const std::filesystem::path& path);
/// 8-bit greyscale of an image clamped to [0,1].
void write_pgm(const Image& image, const std::filesystem::path& path);

struct Series {
    std::vector<double> x, y;
    Rgb colour{0, 0, 0};
};

/// Axes box with the series scaled into it; y range from the data unless fixed.
Canvas line_chart(const std::vector<Series>& series, int width = 480, int height = 320, bool fixed_unit_range = false);

/// Images laid out on a grid, `columns` per row.
Canvas image_grid(const std::vector<Image>& images, int columns, int scale = 3, int gap = 2);

}  // namespace lnm::plot

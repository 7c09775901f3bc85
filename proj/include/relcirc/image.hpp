#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace relcirc {

using Rgb = std::array<std::uint8_t, 3>;

// Interleaved 8-bit RGB raster, row-major, y grows downward.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, Rgb fill = {0, 0, 0});

    Rgb at(int x, int y) const {
        const auto* p = &pixels[3 * (static_cast<std::size_t>(y) * width + x)];
        return {p[0], p[1], p[2]};
    }
    void set(int x, int y, Rgb c) {
        auto* p = &pixels[3 * (static_cast<std::size_t>(y) * width + x)];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    std::uint8_t channel(int x, int y, int c) const {
        return pixels[3 * (static_cast<std::size_t>(y) * width + x) + c];
    }

    bool operator==(const Image&) const = default;
};

void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

// Raw ATNS tensor [height, width, 3] holding channel values 0..255 as f32.
void write_image_atns(const std::string& path, const Image& image);
Image read_image_atns(const std::string& path);

// Dispatches on the extension: ".png" or ".atns".
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& image);

}  // namespace relcirc

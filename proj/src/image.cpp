#include "relcirc/image.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include <png.h>

#include "relcirc/errors.hpp"
#include "relcirc/tensor_io.hpp"

namespace relcirc {

namespace {

constexpr const char* kModule = "image";

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image::Image(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
        pixels[i] = fill[0];
        pixels[i + 1] = fill[1];
        pixels[i + 2] = fill[2];
    }
}

void write_png(const std::string& path, const Image& image) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError(kModule, "cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(kModule, "libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(kModule, "failed writing " + path);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        auto* row = const_cast<png_bytep>(&image.pixels[3 * static_cast<std::size_t>(y) * image.width]);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError(kModule, "cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(kModule, "libpng initialization failed");
    }
    Image image;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(kModule, "failed reading PNG " + path);
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto color_type = png_get_color_type(png, info);
    const auto bit_depth = png_get_bit_depth(png, info);
    // Normalize everything to 8-bit RGB.
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    image = Image(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)));
    for (int y = 0; y < image.height; ++y) {
        png_read_row(png, &image.pixels[3 * static_cast<std::size_t>(y) * image.width], nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_image_atns(const std::string& path, const Image& image) {
    std::vector<float> values(image.pixels.begin(), image.pixels.end());
    const std::uint64_t dims[] = {static_cast<std::uint64_t>(image.height), static_cast<std::uint64_t>(image.width), 3};
    tensor_io::write_tensor(path, dims, tensor_io::DType::f32, values);
}

Image read_image_atns(const std::string& path) {
    const auto tensor = tensor_io::read_tensor(path);
    const auto& d = tensor.dims();
    if (d.size() != 3 || d[2] != 3) throw FormatError(kModule, path + ": expected [H, W, 3] image tensor");
    Image image(static_cast<int>(d[1]), static_cast<int>(d[0]));
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        const float v = std::round(tensor.values[i]);
        image.pixels[i] = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
    return image;
}

Image read_image(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".atns") return read_image_atns(path);
    if (ext == ".png") return read_png(path);
    throw UnsupportedError(kModule, "unknown image extension '" + ext + "' for " + path);
}

void write_image(const std::string& path, const Image& image) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".atns") return write_image_atns(path, image);
    if (ext == ".png") return write_png(path, image);
    throw UnsupportedError(kModule, "unknown image extension '" + ext + "' for " + path);
}

}  // namespace relcirc

#include "vitcx/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "vitcx/error.hpp"

namespace vitcx {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::filesystem::path& path, int width, int height, int color_type,
               const std::vector<std::uint8_t>& rows, int bytes_per_pixel) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * bytes_per_pixel;
    for (int r = 0; r < height; ++r) {
        png_write_row(png, const_cast<png_bytep>(rows.data() + static_cast<std::size_t>(r) * stride));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0)));
}

// Piecewise-linear jet colour map on [0,1].
void jet(float v, float rgb[3]) {
    const float t = std::clamp(v, 0.0f, 1.0f);
    auto ramp = [](float x) { return std::clamp(1.5f - std::fabs(x), 0.0f, 1.0f); };
    rgb[0] = ramp(4.0f * t - 3.0f);
    rgb[1] = ramp(4.0f * t - 2.0f);
    rgb[2] = ramp(4.0f * t - 1.0f);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<std::uint8_t> buffer;
    png_uint_32 width = 0, height = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (stride != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported PNG layout in " + path.string());
    }
    buffer.resize(stride * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    std::vector<float> values(buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) values[i] = static_cast<float>(buffer[i]) / 255.0f;
    return Image(static_cast<int>(height), static_cast<int>(width), 3, std::move(values));
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
    if (image.channels() != 3) throw InvalidDimension("RGB PNG output needs 3 channels");
    std::vector<std::uint8_t> bytes(image.tensor().size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image.tensor()[i]);
    write_png(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, bytes, 3);
}

std::vector<std::uint8_t> to_gray8(const Map2D& map) {
    std::vector<std::uint8_t> bytes(map.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(map[i]);
    return bytes;
}

void write_png_gray(const std::filesystem::path& path, const Map2D& map) {
    write_png(path, map.width(), map.height(), PNG_COLOR_TYPE_GRAY, to_gray8(map), 1);
}

Image resize_bilinear(const Image& image, Shape2 target) {
    if (target.height < 1 || target.width < 1) throw InvalidDimension("zero-sized resize target");
    if (target == image.shape2()) return image;
    const int c = image.channels();
    const Tensor3& src = image.tensor();
    Tensor3 out(target.height, target.width, c);
    const double sy = static_cast<double>(image.height()) / target.height;
    const double sx = static_cast<double>(image.width()) / target.width;
    for (int r = 0; r < target.height; ++r) {
        const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height() - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height() - 1);
        const double wy = fy - y0;
        for (int col = 0; col < target.width; ++col) {
            const double fx = std::clamp((col + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width() - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width() - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double top = src(y0, x0, ch) + wx * (src(y0, x1, ch) - src(y0, x0, ch));
                const double bottom = src(y1, x0, ch) + wx * (src(y1, x1, ch) - src(y1, x0, ch));
                out(r, col, ch) = std::clamp(static_cast<float>(top + wy * (bottom - top)), 0.0f, 1.0f);
            }
        }
    }
    return Image(std::move(out));
}

Image overlay_heatmap(const Image& image, const Map2D& normalized, float alpha) {
    if (normalized.shape() != image.shape2()) throw InvalidDimension("heatmap and image dimensions differ");
    if (image.channels() != 3) throw InvalidDimension("overlay needs an RGB image");
    Tensor3 out(image.height(), image.width(), 3);
    for (std::size_t p = 0; p < normalized.size(); ++p) {
        float rgb[3];
        jet(normalized[p], rgb);
        for (int ch = 0; ch < 3; ++ch) {
            const std::size_t i = p * 3 + static_cast<std::size_t>(ch);
            out[i] = std::clamp((1.0f - alpha) * image.tensor()[i] + alpha * rgb[ch], 0.0f, 1.0f);
        }
    }
    return Image(std::move(out));
}

}  // namespace vitcx

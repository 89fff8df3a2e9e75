#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vitcx/tensor.hpp"

namespace vitcx {

// 8-bit PNG to an RGB image in [0,1]. Gray and alpha inputs are expanded or
// stripped. Throws IoError on unreadable files.
Image read_png(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const Image& image);

// Values clamped to [0,1] and written as round(255 * v).
void write_png_gray(const std::filesystem::path& path, const Map2D& map);

std::vector<std::uint8_t> to_gray8(const Map2D& map);

// Bilinear resize with half-pixel centres, for bringing inputs to the oracle
// resolution.
Image resize_bilinear(const Image& image, Shape2 target);

// Jet-coloured heatmap of a normalized map, alpha-blended over the image.
Image overlay_heatmap(const Image& image, const Map2D& normalized, float alpha = 0.5f);

}  // namespace vitcx

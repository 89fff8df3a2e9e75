#include "vitcx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "vitcx/error.hpp"

namespace vitcx {

namespace {

void check_unit_range(std::span<const float> values, const char* what) {
    for (float v : values) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw InvalidArgument(std::string(what) + " value outside [0,1]: " + std::to_string(v));
        }
    }
}

}  // namespace

Map2D::Map2D(Shape2 shape, float fill) : shape_(shape) {
    if (shape.height < 0 || shape.width < 0) throw InvalidDimension("negative map dimension");
    values_.assign(shape.area(), fill);
}

Map2D::Map2D(Shape2 shape, std::vector<float> values) : shape_(shape), values_(std::move(values)) {
    if (shape.height < 0 || shape.width < 0) throw InvalidDimension("negative map dimension");
    if (values_.size() != shape.area()) {
        throw InvalidDimension("map data length " + std::to_string(values_.size()) + " does not match " +
                               std::to_string(shape.height) + "x" + std::to_string(shape.width));
    }
}

Tensor3::Tensor3(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0) throw InvalidDimension("negative tensor dimension");
    values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Tensor3::Tensor3(int height, int width, int channels, std::vector<float> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (height < 0 || width < 0 || channels < 0) throw InvalidDimension("negative tensor dimension");
    if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
        throw InvalidDimension("tensor data length does not match its shape");
    }
}

Image::Image(Tensor3 pixels) : pixels_(std::move(pixels)) {
    if (pixels_.height() < 1 || pixels_.width() < 1 || pixels_.channels() < 1) {
        throw InvalidDimension("image dimensions must be at least 1");
    }
    check_unit_range(pixels_.values(), "image");
}

Image::Image(int height, int width, int channels, std::vector<float> values)
    : Image(Tensor3(height, width, channels, std::move(values))) {}

Mask::Mask(Map2D values) : values_(std::move(values)) {
    check_unit_range(values_.values(), "mask");
}

Mask::Mask(Shape2 shape, std::vector<float> values) : Mask(Map2D(shape, std::move(values))) {}

Mask Mask::filled(Shape2 shape, float value) { return Mask(Map2D(shape, value)); }

std::string_view to_string(SaliencyKind kind) {
    switch (kind) {
        case SaliencyKind::raw:
            return "raw";
        case SaliencyKind::corrected:
            return "corrected";
        case SaliencyKind::normalized:
            return "normalized";
    }
    return "unknown";
}

EmbeddingBlock::EmbeddingBlock(int num_patches, int dim, int block_index, std::vector<float> values)
    : num_patches_(num_patches), dim_(dim), block_index_(block_index), values_(std::move(values)) {
    if (num_patches < 1 || dim < 1) throw InvalidDimension("embedding block must have N >= 1 and D >= 1");
    if (values_.size() != static_cast<std::size_t>(num_patches) * dim) {
        throw InvalidDimension("embedding data length does not match N x D");
    }
    for (float v : values_) {
        if (!std::isfinite(v)) throw InvalidArgument("embedding block contains non-finite values");
    }
}

int EmbeddingBlock::grid_side() const {
    auto g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(num_patches_))));
    while (g * g > num_patches_) --g;
    while ((g + 1) * (g + 1) <= num_patches_) ++g;
    if (g * g != num_patches_) {
        throw InvalidGeometry("patch count " + std::to_string(num_patches_) + " is not a perfect square");
    }
    return g;
}

Tensor3 EmbeddingBlock::to_grid() const {
    const int g = grid_side();
    // Patch-major N x D is already g x g x D in HWC order.
    return Tensor3(g, g, dim_, values_);
}

EmbeddingBlock EmbeddingBlock::from_grid(const Tensor3& grid, int block_index) {
    if (grid.height() != grid.width()) throw InvalidGeometry("embedding grid must be square");
    return EmbeddingBlock(grid.height() * grid.width(), grid.channels(), block_index,
                          std::vector<float>(grid.values().begin(), grid.values().end()));
}

Map2D EmbeddingBlock::slice(int channel) const {
    if (channel < 0 || channel >= dim_) throw InvalidArgument("embedding channel out of range");
    const int g = grid_side();
    Map2D out({g, g});
    for (int j = 0; j < num_patches_; ++j) out[static_cast<std::size_t>(j)] = at(j, channel);
    return out;
}

int ScoreVector::top1() const {
    if (scores.empty()) throw InvalidArgument("empty score vector");
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

Map2D bilinear_upsample(const Map2D& grid, Shape2 target) {
    if (grid.height() < 1 || grid.width() < 1) throw InvalidDimension("empty grid");
    if (target.height < 1 || target.width < 1) throw InvalidDimension("zero-sized upsample target");
    if (target.height < grid.height() || target.width < grid.width()) {
        throw InvalidDimension("upsample target smaller than the grid");
    }
    const auto [lo_it, hi_it] = std::minmax_element(grid.values().begin(), grid.values().end());
    const float lo = *lo_it;
    const float hi = *hi_it;

    auto source_coord = [](int i, int out_len, int in_len) {
        if (out_len == 1 || in_len == 1) return 0.0;
        return static_cast<double>(i) * static_cast<double>(in_len - 1) / static_cast<double>(out_len - 1);
    };

    Map2D out(target);
    for (int r = 0; r < target.height; ++r) {
        const double sy = source_coord(r, target.height, grid.height());
        const int y0 = std::min(static_cast<int>(sy), grid.height() - 1);
        const int y1 = std::min(y0 + 1, grid.height() - 1);
        const double fy = sy - y0;
        for (int c = 0; c < target.width; ++c) {
            const double sx = source_coord(c, target.width, grid.width());
            const int x0 = std::min(static_cast<int>(sx), grid.width() - 1);
            const int x1 = std::min(x0 + 1, grid.width() - 1);
            const double fx = sx - x0;
            const double a = grid(y0, x0), b = grid(y0, x1), cc = grid(y1, x0), d = grid(y1, x1);
            const double top = a + fx * (b - a);
            const double bottom = cc + fx * (d - cc);
            const double v = top + fy * (bottom - top);
            out(r, c) = std::clamp(static_cast<float>(v), lo, hi);
        }
    }
    return out;
}

std::vector<float> minmax_normalize(std::span<const float> values) {
    std::vector<float> out(values.size(), 0.0f);
    if (values.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) return out;
    const double range = hi - lo;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = std::clamp(static_cast<float>((values[i] - lo) / range), 0.0f, 1.0f);
    }
    return out;
}

Map2D minmax_normalize(const Map2D& map) { return Map2D(map.shape(), minmax_normalize(map.values())); }

}  // namespace vitcx

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace vitcx {

struct Shape2 {
    int height = 0;
    int width = 0;

    std::size_t area() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    bool operator==(const Shape2&) const = default;
};

// Row-major H x W float map. Used for feature grids, masks, coverage and
// saliency values.
class Map2D {
public:
    Map2D() = default;
    Map2D(Shape2 shape, float fill = 0.0f);
    Map2D(Shape2 shape, std::vector<float> values);

    Shape2 shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    std::size_t size() const { return values_.size(); }

    float operator()(int row, int col) const { return values_[index(row, col)]; }
    float& operator()(int row, int col) { return values_[index(row, col)]; }
    float operator[](std::size_t i) const { return values_[i]; }
    float& operator[](std::size_t i) { return values_[i]; }

    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

    bool operator==(const Map2D&) const = default;

private:
    std::size_t index(int row, int col) const {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(shape_.width) + static_cast<std::size_t>(col);
    }

    Shape2 shape_{};
    std::vector<float> values_;
};

// H x W x C tensor stored row-major with channels innermost. Values are not
// range-checked; masked and noisy images may leave [0,1].
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(int height, int width, int channels, float fill = 0.0f);
    Tensor3(int height, int width, int channels, std::vector<float> values);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    Shape2 shape2() const { return {height_, width_}; }
    std::size_t size() const { return values_.size(); }

    float operator()(int row, int col, int ch) const { return values_[index(row, col, ch)]; }
    float& operator()(int row, int col, int ch) { return values_[index(row, col, ch)]; }
    float operator[](std::size_t i) const { return values_[i]; }
    float& operator[](std::size_t i) { return values_[i]; }

    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

    bool same_geometry(const Tensor3& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }
    bool operator==(const Tensor3&) const = default;

private:
    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col)) *
                   static_cast<std::size_t>(channels_) +
               static_cast<std::size_t>(ch);
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> values_;
};

// The explanation subject: a Tensor3 whose values all lie in [0,1].
class Image {
public:
    Image() = default;
    explicit Image(Tensor3 pixels);
    Image(int height, int width, int channels, std::vector<float> values);

    int height() const { return pixels_.height(); }
    int width() const { return pixels_.width(); }
    int channels() const { return pixels_.channels(); }
    Shape2 shape2() const { return pixels_.shape2(); }
    const Tensor3& tensor() const { return pixels_; }

    bool operator==(const Image&) const = default;

private:
    Tensor3 pixels_;
};

// H x W map with every value in [0,1].
class Mask {
public:
    Mask() = default;
    explicit Mask(Map2D values);
    Mask(Shape2 shape, std::vector<float> values);

    static Mask filled(Shape2 shape, float value);

    Shape2 shape() const { return values_.shape(); }
    int height() const { return values_.height(); }
    int width() const { return values_.width(); }
    std::size_t size() const { return values_.size(); }
    float operator[](std::size_t i) const { return values_[i]; }
    float operator()(int row, int col) const { return values_(row, col); }
    std::span<const float> values() const { return values_.values(); }
    const Map2D& map() const { return values_; }

    bool operator==(const Mask&) const = default;

private:
    Map2D values_;
};

enum class SaliencyKind { raw, corrected, normalized };

std::string_view to_string(SaliencyKind kind);

struct SaliencyMap {
    Map2D values;
    SaliencyKind kind = SaliencyKind::raw;
};

// N x D patch embeddings (patch tokens only) from one transformer block.
// Patch j sits at grid position (j / g, j % g).
class EmbeddingBlock {
public:
    EmbeddingBlock() = default;
    EmbeddingBlock(int num_patches, int dim, int block_index, std::vector<float> values);

    int num_patches() const { return num_patches_; }
    int dim() const { return dim_; }
    int block_index() const { return block_index_; }
    float at(int patch, int channel) const {
        return values_[static_cast<std::size_t>(patch) * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(channel)];
    }
    std::span<const float> values() const { return values_; }

    // Side of the square patch grid; throws InvalidGeometry when N is not a
    // perfect square.
    int grid_side() const;

    // g x g x D view of the embeddings, and its inverse.
    Tensor3 to_grid() const;
    static EmbeddingBlock from_grid(const Tensor3& grid, int block_index);

    // One frontal slice (embedding channel) as a g x g map.
    Map2D slice(int channel) const;

    bool operator==(const EmbeddingBlock&) const = default;

private:
    int num_patches_ = 0;
    int dim_ = 0;
    int block_index_ = 0;
    std::vector<float> values_;
};

struct ScoreVector {
    std::vector<double> scores;
    int target_class = 0;

    int top1() const;
};

// Bilinear interpolation with align-corners mapping: grid corners land on
// image corners. Output stays within [min(grid), max(grid)].
Map2D bilinear_upsample(const Map2D& grid, Shape2 target);

// (v - min) / (max - min); a constant map becomes all zeros.
Map2D minmax_normalize(const Map2D& map);
std::vector<float> minmax_normalize(std::span<const float> values);

}  // namespace vitcx

#pragma once

#include <span>
#include <vector>

#include "vitcx/oracle.hpp"
#include "vitcx/tensor.hpp"

namespace vitcx {

struct PerturbationCurve {
    std::vector<double> fractions;
    std::vector<double> scores;
};

// Half-open pixel box [x0, x1) x [y0, y1).
struct BoundingBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    bool contains(int row, int col) const { return col >= x0 && col < x1 && row >= y0 && row < y1; }
    // Throws InvalidArgument unless 0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height.
    void validate(Shape2 image) const;
};

struct CurveOptions {
    int steps = 100;
    std::size_t batch_size = 64;
};

// Pixel indices sorted by descending saliency; ties by ascending row-major index.
std::vector<std::size_t> saliency_order(const Map2D& saliency);

// Removes the ceil(HW/steps) most salient remaining pixels per step (set to
// 0 in every channel). The first point is the unperturbed image.
PerturbationCurve deletion_curve(const Image& image, const Map2D& saliency, int target, ModelOracle& oracle,
                                 const CurveOptions& opts = {});

// Starts from an all-zeros canvas and restores original pixels in the same
// order. The last point is the full image.
PerturbationCurve insertion_curve(const Image& image, const Map2D& saliency, int target, ModelOracle& oracle,
                                  const CurveOptions& opts = {});

// Trapezoidal area under the curve over the fraction axis.
double auc(const PerturbationCurve& curve);

// True when the saliency argmax (ties to the lowest row-major index) falls
// inside any of the boxes.
bool pointing_game(const Map2D& saliency, std::span<const BoundingBox> boxes);

struct PointingTally {
    std::size_t hits = 0;
    std::size_t misses = 0;

    void record(bool hit) { hit ? ++hits : ++misses; }
    // hits / (hits + misses); 0 when nothing was recorded.
    double accuracy() const;
};

}  // namespace vitcx

#pragma once

#include <span>
#include <vector>

#include "vitcx/mask_gen.hpp"
#include "vitcx/tensor.hpp"

namespace vitcx {

// Coverage frequency rho(x): per-pixel mean of the mask values.
struct CoverageMap {
    Map2D values;
};

// Pixels whose coverage falls below this are treated as uncovered.
inline constexpr double kZeroCoverage = 1e-12;

// Mean impact score mu and per-mask deviations beta_i = s_i - mu.
struct Decomposition {
    double mu = 0.0;
    std::vector<double> betas;
    std::size_t count = 0;

    // Population variance of the scores.
    double variance() const;
    bool overdetermined(double mu_threshold = 0.9) const { return mu > mu_threshold; }
};

// Two-term split of one pixel's saliency: the score-deviation term and the
// coverage term (mu * K * rho(x) for raw, mu * K for corrected).
struct PixelDecomposition {
    double deviation_term = 0.0;
    double coverage_term = 0.0;

    double total() const { return deviation_term + coverage_term; }
};

// Streams (mask, score) pairs into the raw sum and the coverage sum so that
// large mask sets need not be held in memory.
class SaliencyAccumulator {
public:
    explicit SaliencyAccumulator(Shape2 shape);

    void add(const Mask& mask, double score);
    void add(std::span<const Mask> masks, std::span<const double> scores);

    std::size_t count() const { return count_; }
    Shape2 shape() const { return shape_; }

    SaliencyMap raw() const;
    CoverageMap coverage() const;
    SaliencyMap corrected() const;

private:
    Shape2 shape_;
    std::vector<double> weighted_;
    std::vector<double> mass_;
    std::size_t count_ = 0;
};

// S(x) = sum_i s_i * M_i(x).
SaliencyMap raw_saliency(std::span<const double> scores, const MaskSet& masks);

CoverageMap coverage(const MaskSet& masks);

// S(x) / rho(x), and 0 where the pixel is uncovered.
SaliencyMap corrected_saliency(std::span<const double> scores, const MaskSet& masks);

Decomposition decompose_scores(std::span<const double> scores);

// Evaluates both terms at a single row-major pixel index.
PixelDecomposition decompose(std::span<const double> scores, const MaskSet& masks, std::size_t pixel,
                             bool corrected = false);

SaliencyMap normalize(const SaliencyMap& map);

}  // namespace vitcx

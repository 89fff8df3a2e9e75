#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vitcx/mask_gen.hpp"
#include "vitcx/oracle.hpp"
#include "vitcx/tensor.hpp"

namespace vitcx {

struct NoiseConfig {
    double sigma = 0.1;
    std::uint64_t seed = 0;
};

enum class ScoreMode { debiased, raw };

struct ImpactScore {
    std::size_t mask_index = 0;
    // f(y | X*M), only queried in raw mode.
    std::optional<double> raw;
    // f(y | X*M + eps) and f(y | X + eps), only queried in debiased mode.
    std::optional<double> noisy_masked;
    std::optional<double> noisy_full;
    // Score used for aggregation: the debiased score, or the raw one in raw mode.
    double debiased = 0.0;
};

// Z ~ N(0, sigma^2) over H x W x C. Exactly zero when sigma == 0.
Tensor3 draw_noise(int height, int width, int channels, const NoiseConfig& cfg);

// eps(x, c) = (1 - M(x)) * Z(x, c).
Tensor3 make_noise(const Mask& mask, const Tensor3& z);
Tensor3 make_noise(const Mask& mask, int channels, const NoiseConfig& cfg);

// X * M with the mask broadcast over channels.
Tensor3 apply_mask(const Tensor3& image, const Mask& mask);
inline Tensor3 apply_mask(const Image& image, const Mask& mask) { return apply_mask(image.tensor(), mask); }

// clean_full + noisy_masked - noisy_full, grouped as in the definition.
inline double debiased_score(double noisy_masked, double clean_full, double noisy_full) {
    return noisy_masked + (clean_full - noisy_full);
}

// Scores masks against one image and target. In debiased mode the clean score
// f(y|X) is queried once on construction and a single Z is shared by every
// mask scored through this object. Masks can be fed in chunks; the oracle
// must outlive the scorer.
class ImpactScorer {
public:
    ImpactScorer(ModelOracle& oracle, const Image& image, int target, ScoreMode mode, const NoiseConfig& noise,
                 std::size_t batch_size = 64);

    std::vector<ImpactScore> score(std::span<const Mask> masks, std::size_t first_index = 0);

    std::optional<double> clean_score() const { return clean_full_; }

private:
    std::vector<double> query(std::span<const Tensor3> images, std::size_t first_index);

    ModelOracle& oracle_;
    Image image_;
    int target_;
    ScoreMode mode_;
    std::size_t batch_size_;
    Tensor3 z_;
    std::optional<double> clean_full_;
};

// One ImpactScore per mask, in mask order.
std::vector<ImpactScore> debiased_impact(const Image& image, int target, const MaskSet& masks, ModelOracle& oracle,
                                         const NoiseConfig& cfg, std::size_t batch_size = 64);

std::vector<double> aggregation_scores(std::span<const ImpactScore> scores);

}  // namespace vitcx

#include "vitcx/scoring.hpp"

#include <random>
#include <string>

#include "vitcx/error.hpp"

namespace vitcx {

Tensor3 draw_noise(int height, int width, int channels, const NoiseConfig& cfg) {
    if (!(cfg.sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
    Tensor3 z(height, width, channels, 0.0f);
    if (cfg.sigma == 0.0) return z;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<float> dist(0.0f, static_cast<float>(cfg.sigma));
    for (auto& v : z.values()) v = dist(rng);
    return z;
}

Tensor3 make_noise(const Mask& mask, const Tensor3& z) {
    if (mask.shape() != z.shape2()) throw InvalidDimension("noise and mask dimensions differ");
    Tensor3 eps(z.height(), z.width(), z.channels());
    const int c = z.channels();
    for (std::size_t p = 0; p < mask.size(); ++p) {
        const float keep = 1.0f - mask[p];
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t i = p * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch);
            eps[i] = keep * z[i];
        }
    }
    return eps;
}

Tensor3 make_noise(const Mask& mask, int channels, const NoiseConfig& cfg) {
    return make_noise(mask, draw_noise(mask.height(), mask.width(), channels, cfg));
}

Tensor3 apply_mask(const Tensor3& image, const Mask& mask) {
    if (mask.shape() != image.shape2()) throw InvalidDimension("mask and image dimensions differ");
    Tensor3 out(image.height(), image.width(), image.channels());
    const int c = image.channels();
    for (std::size_t p = 0; p < mask.size(); ++p) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t i = p * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch);
            out[i] = image[i] * mask[p];
        }
    }
    return out;
}

namespace {

Tensor3 add(const Tensor3& a, const Tensor3& b) {
    Tensor3 out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

}  // namespace

ImpactScorer::ImpactScorer(ModelOracle& oracle, const Image& image, int target, ScoreMode mode,
                           const NoiseConfig& noise, std::size_t batch_size)
    : oracle_(oracle), image_(image), target_(target), mode_(mode), batch_size_(batch_size == 0 ? 1 : batch_size) {
    if (mode_ == ScoreMode::debiased) {
        z_ = draw_noise(image.height(), image.width(), image.channels(), noise);
        const Tensor3 clean[] = {image.tensor()};
        try {
            clean_full_ = oracle_.score_batch(clean, target_).at(0);
        } catch (const OracleError& e) {
            throw OracleError(std::string("clean image score failed: ") + e.what());
        }
    }
}

std::vector<double> ImpactScorer::query(std::span<const Tensor3> images, std::size_t first_index) {
    try {
        auto scores = oracle_.score_batch(images, target_);
        if (scores.size() != images.size()) throw OracleError("oracle returned the wrong number of scores");
        return scores;
    } catch (const OracleError& e) {
        throw OracleError("scoring masks from index " + std::to_string(first_index) + " failed: " + e.what());
    }
}

std::vector<ImpactScore> ImpactScorer::score(std::span<const Mask> masks, std::size_t first_index) {
    std::vector<ImpactScore> out;
    out.reserve(masks.size());
    for (std::size_t start = 0; start < masks.size(); start += batch_size_) {
        const std::size_t len = std::min(batch_size_, masks.size() - start);
        const auto chunk = masks.subspan(start, len);
        const std::size_t base = first_index + start;

        if (mode_ == ScoreMode::raw) {
            std::vector<Tensor3> batch;
            batch.reserve(len);
            for (const auto& m : chunk) batch.push_back(apply_mask(image_.tensor(), m));
            const auto scores = query(batch, base);
            for (std::size_t i = 0; i < len; ++i) {
                ImpactScore s;
                s.mask_index = base + i;
                s.raw = scores[i];
                s.debiased = scores[i];
                out.push_back(s);
            }
            continue;
        }

        // Masked-noisy images first, then full-noisy images, in one batch.
        std::vector<Tensor3> batch;
        batch.reserve(2 * len);
        std::vector<Tensor3> noise;
        noise.reserve(len);
        for (const auto& m : chunk) noise.push_back(make_noise(m, z_));
        for (std::size_t i = 0; i < len; ++i) batch.push_back(add(apply_mask(image_.tensor(), chunk[i]), noise[i]));
        for (std::size_t i = 0; i < len; ++i) batch.push_back(add(image_.tensor(), noise[i]));
        const auto scores = query(batch, base);
        for (std::size_t i = 0; i < len; ++i) {
            ImpactScore s;
            s.mask_index = base + i;
            s.noisy_masked = scores[i];
            s.noisy_full = scores[len + i];
            s.debiased = debiased_score(scores[i], *clean_full_, scores[len + i]);
            out.push_back(s);
        }
    }
    return out;
}

std::vector<ImpactScore> debiased_impact(const Image& image, int target, const MaskSet& masks, ModelOracle& oracle,
                                         const NoiseConfig& cfg, std::size_t batch_size) {
    ImpactScorer scorer(oracle, image, target, ScoreMode::debiased, cfg, batch_size);
    return scorer.score(masks.masks());
}

std::vector<double> aggregation_scores(std::span<const ImpactScore> scores) {
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores) out.push_back(s.debiased);
    return out;
}

}  // namespace vitcx

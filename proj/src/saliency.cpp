#include "vitcx/saliency.hpp"

#include "vitcx/error.hpp"

namespace vitcx {

namespace {

void check_lengths(std::span<const double> scores, const MaskSet& masks) {
    if (scores.size() != masks.size()) {
        throw InvalidArgument("score count " + std::to_string(scores.size()) + " does not match mask count " +
                              std::to_string(masks.size()));
    }
}

Map2D to_map(Shape2 shape, const std::vector<double>& values) {
    Map2D out(shape);
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
    return out;
}

}  // namespace

double Decomposition::variance() const {
    if (betas.empty()) return 0.0;
    double total = 0.0;
    for (double b : betas) total += b * b;
    return total / static_cast<double>(betas.size());
}

SaliencyAccumulator::SaliencyAccumulator(Shape2 shape)
    : shape_(shape), weighted_(shape.area(), 0.0), mass_(shape.area(), 0.0) {}

void SaliencyAccumulator::add(const Mask& mask, double score) {
    if (mask.shape() != shape_) throw InvalidDimension("mask does not match the saliency shape");
    const auto values = mask.values();
    for (std::size_t p = 0; p < values.size(); ++p) {
        weighted_[p] += score * values[p];
        mass_[p] += values[p];
    }
    ++count_;
}

void SaliencyAccumulator::add(std::span<const Mask> masks, std::span<const double> scores) {
    if (masks.size() != scores.size()) throw InvalidArgument("mask and score counts differ");
    for (std::size_t i = 0; i < masks.size(); ++i) add(masks[i], scores[i]);
}

SaliencyMap SaliencyAccumulator::raw() const { return {to_map(shape_, weighted_), SaliencyKind::raw}; }

CoverageMap SaliencyAccumulator::coverage() const {
    std::vector<double> rho(mass_.size(), 0.0);
    if (count_ > 0) {
        for (std::size_t p = 0; p < rho.size(); ++p) rho[p] = mass_[p] / static_cast<double>(count_);
    }
    return {to_map(shape_, rho)};
}

SaliencyMap SaliencyAccumulator::corrected() const {
    std::vector<double> out(weighted_.size(), 0.0);
    for (std::size_t p = 0; p < out.size(); ++p) {
        const double rho = count_ == 0 ? 0.0 : mass_[p] / static_cast<double>(count_);
        out[p] = rho < kZeroCoverage ? 0.0 : weighted_[p] / rho;
    }
    return {to_map(shape_, out), SaliencyKind::corrected};
}

SaliencyMap raw_saliency(std::span<const double> scores, const MaskSet& masks) {
    check_lengths(scores, masks);
    SaliencyAccumulator acc(masks.shape());
    acc.add(masks.masks(), scores);
    return acc.raw();
}

CoverageMap coverage(const MaskSet& masks) {
    SaliencyAccumulator acc(masks.shape());
    for (const auto& m : masks.masks()) acc.add(m, 0.0);
    return acc.coverage();
}

SaliencyMap corrected_saliency(std::span<const double> scores, const MaskSet& masks) {
    check_lengths(scores, masks);
    SaliencyAccumulator acc(masks.shape());
    acc.add(masks.masks(), scores);
    return acc.corrected();
}

Decomposition decompose_scores(std::span<const double> scores) {
    Decomposition d;
    d.count = scores.size();
    if (scores.empty()) return d;
    double total = 0.0;
    for (double s : scores) total += s;
    d.mu = total / static_cast<double>(scores.size());
    d.betas.reserve(scores.size());
    for (double s : scores) d.betas.push_back(s - d.mu);
    return d;
}

PixelDecomposition decompose(std::span<const double> scores, const MaskSet& masks, std::size_t pixel,
                             bool corrected) {
    check_lengths(scores, masks);
    if (pixel >= masks.shape().area()) throw InvalidArgument("pixel index out of range");
    const Decomposition d = decompose_scores(scores);
    const double k = static_cast<double>(masks.size());

    double deviation = 0.0;
    double mass = 0.0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const double m = masks[i][pixel];
        deviation += d.betas[i] * m;
        mass += m;
    }
    const double rho = mass / k;

    PixelDecomposition out;
    if (!corrected) {
        out.deviation_term = deviation;
        out.coverage_term = d.mu * k * rho;
    } else if (rho >= kZeroCoverage) {
        out.deviation_term = deviation / rho;
        out.coverage_term = d.mu * k;
    }
    return out;
}

SaliencyMap normalize(const SaliencyMap& map) { return {minmax_normalize(map.values), SaliencyKind::normalized}; }

}  // namespace vitcx

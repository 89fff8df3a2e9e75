#include "vitcx/eval.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "vitcx/error.hpp"

namespace vitcx {

void BoundingBox::validate(Shape2 image) const {
    if (!(0 <= x0 && x0 < x1 && x1 <= image.width && 0 <= y0 && y0 < y1 && y1 <= image.height)) {
        throw InvalidArgument("bounding box [" + std::to_string(x0) + "," + std::to_string(y0) + "," +
                              std::to_string(x1) + "," + std::to_string(y1) + ") outside the image");
    }
}

std::vector<std::size_t> saliency_order(const Map2D& saliency) {
    std::vector<std::size_t> order(saliency.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return saliency[a] > saliency[b]; });
    return order;
}

namespace {

enum class Direction { deletion, insertion };

PerturbationCurve perturbation_curve(const Image& image, const Map2D& saliency, int target, ModelOracle& oracle,
                                     const CurveOptions& opts, Direction dir) {
    if (saliency.shape() != image.shape2()) throw InvalidDimension("saliency and image dimensions differ");
    if (opts.steps < 1) throw InvalidArgument("curve needs at least one step");

    const std::size_t total = image.shape2().area();
    const std::size_t per_step = (total + static_cast<std::size_t>(opts.steps) - 1) / static_cast<std::size_t>(opts.steps);
    const auto order = saliency_order(saliency);
    const int c = image.channels();
    const Tensor3& source = image.tensor();

    Tensor3 canvas = dir == Direction::deletion ? source : Tensor3(image.height(), image.width(), c, 0.0f);
    std::vector<Tensor3> frames;
    PerturbationCurve curve;
    frames.push_back(canvas);
    curve.fractions.push_back(0.0);
    for (std::size_t done = 0; done < total;) {
        const std::size_t next = std::min(total, done + per_step);
        for (std::size_t k = done; k < next; ++k) {
            const std::size_t base = order[k] * static_cast<std::size_t>(c);
            for (int ch = 0; ch < c; ++ch) {
                canvas[base + static_cast<std::size_t>(ch)] =
                    dir == Direction::deletion ? 0.0f : source[base + static_cast<std::size_t>(ch)];
            }
        }
        done = next;
        frames.push_back(canvas);
        curve.fractions.push_back(static_cast<double>(done) / static_cast<double>(total));
    }

    const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
    curve.scores.reserve(frames.size());
    for (std::size_t start = 0; start < frames.size(); start += batch) {
        const std::size_t len = std::min(batch, frames.size() - start);
        const auto scores = oracle.score_batch(std::span<const Tensor3>(frames).subspan(start, len), target);
        if (scores.size() != len) throw OracleError("oracle returned the wrong number of scores");
        curve.scores.insert(curve.scores.end(), scores.begin(), scores.end());
    }
    return curve;
}

}  // namespace

PerturbationCurve deletion_curve(const Image& image, const Map2D& saliency, int target, ModelOracle& oracle,
                                 const CurveOptions& opts) {
    return perturbation_curve(image, saliency, target, oracle, opts, Direction::deletion);
}

PerturbationCurve insertion_curve(const Image& image, const Map2D& saliency, int target, ModelOracle& oracle,
                                  const CurveOptions& opts) {
    return perturbation_curve(image, saliency, target, oracle, opts, Direction::insertion);
}

double auc(const PerturbationCurve& curve) {
    if (curve.fractions.size() != curve.scores.size()) throw InvalidArgument("curve axes differ in length");
    double area = 0.0;
    for (std::size_t i = 1; i < curve.fractions.size(); ++i) {
        const double width = curve.fractions[i] - curve.fractions[i - 1];
        area += width * (curve.scores[i] + curve.scores[i - 1]) / 2.0;
    }
    return area;
}

bool pointing_game(const Map2D& saliency, std::span<const BoundingBox> boxes) {
    if (boxes.empty()) throw InvalidArgument("pointing game needs at least one bounding box");
    if (saliency.size() == 0) throw InvalidDimension("empty saliency map");
    for (const auto& b : boxes) b.validate(saliency.shape());
    const auto values = saliency.values();
    const auto peak = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    const int row = static_cast<int>(peak / static_cast<std::size_t>(saliency.width()));
    const int col = static_cast<int>(peak % static_cast<std::size_t>(saliency.width()));
    return std::any_of(boxes.begin(), boxes.end(), [&](const BoundingBox& b) { return b.contains(row, col); });
}

double PointingTally::accuracy() const {
    const std::size_t n = hits + misses;
    return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace vitcx

#include "vitcx/mask_gen.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>

#include "vitcx/error.hpp"

namespace vitcx {

MaskSet::MaskSet(std::vector<Mask> masks, MaskProvenance provenance, std::optional<int> source_block)
    : masks_(std::move(masks)), provenance_(provenance), source_block_(source_block) {
    if (masks_.empty()) throw InvalidArgument("mask set must not be empty");
    const Shape2 shape = masks_.front().shape();
    for (const auto& m : masks_) {
        if (m.shape() != shape) throw InvalidDimension("masks in a set must share dimensions");
    }
}

MaskSet embeddings_to_masks(const EmbeddingBlock& block, Shape2 target) {
    (void)block.grid_side();  // validates N = g^2
    std::vector<Mask> masks;
    masks.reserve(static_cast<std::size_t>(block.dim()));
    for (int d = 0; d < block.dim(); ++d) {
        masks.emplace_back(minmax_normalize(bilinear_upsample(block.slice(d), target)));
    }
    return MaskSet(std::move(masks), MaskProvenance::vit, block.block_index());
}

double pairwise_cosine_sim(const Mask& a, const Mask& b) {
    if (a.shape() != b.shape()) throw InvalidDimension("cosine similarity of masks with different shapes");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> similarity_matrix(const MaskSet& set) {
    const auto n = static_cast<Eigen::Index>(set.size());
    const auto pixels = static_cast<Eigen::Index>(set.shape().area());
    constexpr Eigen::Index kChunk = 4096;

    // Gram matrix accumulated over pixel chunks to bound memory.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd chunk(n, std::min(kChunk, pixels));
    for (Eigen::Index start = 0; start < pixels; start += kChunk) {
        const Eigen::Index len = std::min(kChunk, pixels - start);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto values = set[static_cast<std::size_t>(i)].values();
            for (Eigen::Index p = 0; p < len; ++p) chunk(i, p) = values[static_cast<std::size_t>(start + p)];
        }
        const auto block = chunk.leftCols(len);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(block);
    }

    std::vector<double> sim(static_cast<std::size_t>(n * n), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double gi = gram(i, i), gj = gram(j, j);
            const double s = (gi == 0.0 || gj == 0.0) ? 0.0 : gram(i, j) / (std::sqrt(gi) * std::sqrt(gj));
            sim[static_cast<std::size_t>(i * n + j)] = s;
            sim[static_cast<std::size_t>(j * n + i)] = s;
        }
    }
    return sim;
}

double mean_pairwise_sim(const MaskSet& set) {
    const std::size_t n = set.size();
    if (n < 2) throw InvalidArgument("mean pairwise similarity needs at least 2 masks");
    const auto sim = similarity_matrix(set);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) total += sim[i * n + j];
    }
    return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

Clusters agglomerative_cluster(std::span<const double> distances, std::size_t n, double delta) {
    if (n == 0) throw InvalidArgument("cannot cluster an empty set");
    if (distances.size() != n * n) throw InvalidDimension("distance matrix must be n x n");
    if (!(delta >= 0.0)) throw InvalidArgument("clustering threshold must be >= 0");

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(distances.begin(), distances.end());
    auto d = [&](std::size_t i, std::size_t j) -> double& { return dist[i * n + j]; };

    std::vector<bool> active(n, true);
    std::vector<std::size_t> sizes(n, 1);
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};

    // Nearest active neighbour of i among clusters with a larger index.
    std::vector<std::size_t> nn(n, n);
    std::vector<double> nd(n, kInf);
    auto refresh = [&](std::size_t i) {
        nn[i] = n;
        nd[i] = kInf;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (active[j] && d(i, j) < nd[i]) {
                nd[i] = d(i, j);
                nn[i] = j;
            }
        }
    };
    for (std::size_t i = 0; i < n; ++i) refresh(i);

    for (std::size_t remaining = n; remaining > 1; --remaining) {
        std::size_t a = n;
        double best = kInf;
        for (std::size_t i = 0; i < n; ++i) {
            if (active[i] && nn[i] < n && nd[i] < best) {
                best = nd[i];
                a = i;
            }
        }
        if (a == n || best > delta) break;
        const std::size_t b = nn[a];

        // Lance-Williams update for average linkage; b folds into a.
        const double wa = static_cast<double>(sizes[a]);
        const double wb = static_cast<double>(sizes[b]);
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == a || k == b) continue;
            const double merged = (wa * d(a, k) + wb * d(b, k)) / (wa + wb);
            d(a, k) = merged;
            d(k, a) = merged;
        }
        active[b] = false;
        sizes[a] += sizes[b];
        members[a].insert(members[a].end(), members[b].begin(), members[b].end());
        members[b].clear();

        refresh(a);
        for (std::size_t k = 0; k < a; ++k) {
            if (!active[k]) continue;
            if (nn[k] == a || nn[k] == b) {
                refresh(k);
            } else if (d(k, a) < nd[k] || (d(k, a) == nd[k] && a < nn[k])) {
                nd[k] = d(k, a);
                nn[k] = a;
            }
        }
        for (std::size_t k = a + 1; k < n; ++k) {
            if (active[k] && nn[k] == b) refresh(k);
        }
    }

    Clusters out;
    for (std::size_t i = 0; i < n; ++i) {
        if (!active[i]) continue;
        auto group = members[i];
        std::sort(group.begin(), group.end());
        out.push_back(std::move(group));
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.front() < y.front(); });
    return out;
}

Clusters agglomerative_cluster(const MaskSet& set, const ClusteringConfig& cfg) {
    auto dist = similarity_matrix(set);
    for (auto& v : dist) v = 1.0 - v;
    return agglomerative_cluster(dist, set.size(), cfg.delta);
}

MaskSet cluster_means(const MaskSet& set, const Clusters& clusters) {
    std::vector<int> seen(set.size(), 0);
    for (const auto& group : clusters) {
        if (group.empty()) throw InvalidArgument("empty cluster");
        for (std::size_t idx : group) {
            if (idx >= set.size()) throw InvalidArgument("cluster index out of range");
            ++seen[idx];
        }
    }
    for (int count : seen) {
        if (count != 1) throw InvalidArgument("clusters do not partition the mask set");
    }

    const Shape2 shape = set.shape();
    std::vector<Mask> out;
    out.reserve(clusters.size());
    std::vector<double> acc(shape.area());
    for (const auto& group : clusters) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t idx : group) {
            const auto values = set[idx].values();
            for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += values[p];
        }
        std::vector<float> mean(acc.size());
        const double inv = 1.0 / static_cast<double>(group.size());
        for (std::size_t p = 0; p < acc.size(); ++p) mean[p] = std::clamp(static_cast<float>(acc[p] * inv), 0.0f, 1.0f);
        out.emplace_back(shape, std::move(mean));
    }
    return MaskSet(std::move(out), MaskProvenance::clustered, set.source_block());
}

Mask random_mask_at(const RandomMaskConfig& cfg, Shape2 target, int index) {
    if (cfg.grid < 1) throw InvalidArgument("random mask grid must be >= 1");
    if (!(cfg.keep_prob > 0.0 && cfg.keep_prob < 1.0)) throw InvalidArgument("keep probability must lie in (0,1)");
    if (target.height < 1 || target.width < 1) throw InvalidDimension("zero-sized mask target");

    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    std::bernoulli_distribution keep(cfg.keep_prob);

    const int g = cfg.grid;
    Map2D grid({g, g});
    for (auto& v : grid.values()) v = keep(rng) ? 1.0f : 0.0f;

    const int cell_h = (target.height + g - 1) / g;
    const int cell_w = (target.width + g - 1) / g;
    const Map2D up = bilinear_upsample(grid, {(g + 1) * cell_h, (g + 1) * cell_w});
    std::uniform_int_distribution<int> shift_y(0, cell_h - 1);
    std::uniform_int_distribution<int> shift_x(0, cell_w - 1);
    const int dy = shift_y(rng);
    const int dx = shift_x(rng);

    Map2D out(target);
    for (int r = 0; r < target.height; ++r) {
        for (int c = 0; c < target.width; ++c) out(r, c) = up(r + dy, c + dx);
    }
    return Mask(std::move(out));
}

MaskSet random_masks(const RandomMaskConfig& cfg, Shape2 target) {
    if (cfg.count < 1) throw InvalidArgument("random mask count must be >= 1");
    std::vector<Mask> masks;
    masks.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) masks.push_back(random_mask_at(cfg, target, i));
    return MaskSet(std::move(masks), MaskProvenance::random);
}

}  // namespace vitcx

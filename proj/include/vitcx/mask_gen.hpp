#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vitcx/tensor.hpp"

namespace vitcx {

enum class MaskProvenance { vit, clustered, random };

class MaskSet {
public:
    MaskSet(std::vector<Mask> masks, MaskProvenance provenance, std::optional<int> source_block = std::nullopt);

    std::span<const Mask> masks() const { return masks_; }
    const Mask& operator[](std::size_t i) const { return masks_[i]; }
    std::size_t size() const { return masks_.size(); }
    Shape2 shape() const { return masks_.front().shape(); }
    MaskProvenance provenance() const { return provenance_; }
    std::optional<int> source_block() const { return source_block_; }

private:
    std::vector<Mask> masks_;
    MaskProvenance provenance_;
    std::optional<int> source_block_;
};

struct ClusteringConfig {
    // Average-linkage cosine distance at or below which clusters merge.
    double delta = 0.1;
};

// Partition of mask indices. Groups are ordered by their smallest member and
// members are ascending.
using Clusters = std::vector<std::vector<std::size_t>>;

// One mask per embedding channel: the g x g slice is bilinearly upsampled to
// the target size and then min-max normalized.
MaskSet embeddings_to_masks(const EmbeddingBlock& block, Shape2 target);

// Cosine similarity of the row-major flattened masks. Zero masks have
// similarity 0 with everything, including themselves.
double pairwise_cosine_sim(const Mask& a, const Mask& b);

// Full n x n row-major cosine similarity matrix of a mask set.
std::vector<double> similarity_matrix(const MaskSet& set);

// Mean of Sim(i, j) over i < j.
double mean_pairwise_sim(const MaskSet& set);

// Average-linkage agglomerative clustering on cosine distance 1 - Sim. Merging
// stops once the smallest inter-cluster distance exceeds delta. Ties go to
// the lexicographically smallest (i, j) cluster pair.
Clusters agglomerative_cluster(const MaskSet& set, const ClusteringConfig& cfg);

// Same algorithm on a precomputed n x n row-major distance matrix.
Clusters agglomerative_cluster(std::span<const double> distances, std::size_t n, double delta);

// Element-wise mean of each group. Throws InvalidArgument unless `clusters`
// partitions [0, set.size()).
MaskSet cluster_means(const MaskSet& set, const Clusters& clusters);

struct RandomMaskConfig {
    int count = 5000;
    int grid = 7;
    double keep_prob = 0.5;
    std::uint64_t seed = 0;
};

// RISE-style masks: a random binary grid, upsampled to (grid+1) cells and
// cropped at a random sub-cell shift.
MaskSet random_masks(const RandomMaskConfig& cfg, Shape2 target);

// The index-th mask of random_masks(cfg, target), generated on its own.
Mask random_mask_at(const RandomMaskConfig& cfg, Shape2 target, int index);

}  // namespace vitcx

#include <cmath>
#include <random>

#include "cluster_oracle.hpp"
#include "doctest.h"
#include "test_support.hpp"
#include "vitcx/error.hpp"
#include "vitcx/mask_gen.hpp"

using namespace vitcx;
using vitcx::testing::brute_force_average_linkage;
using vitcx::testing::canonical;

namespace {

MaskSet flat_set(const std::vector<std::vector<float>>& rows) {
    std::vector<Mask> masks;
    for (const auto& r : rows) masks.emplace_back(Shape2{1, static_cast<int>(r.size())}, r);
    return MaskSet(std::move(masks), MaskProvenance::vit);
}

std::vector<double> cosine_distances(const MaskSet& set) {
    const std::size_t n = set.size();
    std::vector<double> d(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] = 1.0 - pairwise_cosine_sim(set[i], set[j]);
    }
    return d;
}

}  // namespace

TEST_CASE("embeddings_to_masks on a ViT-B/16 shaped block") {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> v(196 * 768);
    for (auto& x : v) x = n(rng);
    const EmbeddingBlock block(196, 768, 11, std::move(v));
    const MaskSet set = embeddings_to_masks(block, {224, 224});
    CHECK(set.size() == 768);
    CHECK(set.shape() == Shape2{224, 224});
    CHECK(set.provenance() == MaskProvenance::vit);
    CHECK(set.source_block() == 11);
}

TEST_CASE("embeddings_to_masks: constant slice gives a zero mask, endpoints reach 0 and 1") {
    // Two channels over a 2x2 grid; channel 0 is [[0,1],[2,3]], channel 1 constant.
    const EmbeddingBlock block(4, 2, 0, {0, 5, 1, 5, 2, 5, 3, 5});
    const MaskSet set = embeddings_to_masks(block, {4, 4});
    REQUIRE(set.size() == 2);
    CHECK(set[0](0, 0) == 0.0f);
    CHECK(set[0](3, 3) == 1.0f);
    for (float x : set[1].values()) CHECK(x == 0.0f);
}

TEST_CASE("embeddings_to_masks rejects non-square patch counts") {
    const EmbeddingBlock block(8, 2, 0, std::vector<float>(16, 0.5f));
    CHECK_THROWS_AS(embeddings_to_masks(block, {8, 8}), InvalidGeometry);
}

TEST_CASE("pairwise cosine similarity examples") {
    const auto set = flat_set({{1, 0, 1, 0}, {1, 1, 0, 0}, {0, 1, 0, 1}, {0, 0, 0, 0}});
    CHECK(pairwise_cosine_sim(set[0], set[0]) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pairwise_cosine_sim(set[0], set[2]) == 0.0);
    // dot 1, norms sqrt(2) * sqrt(2)
    CHECK(pairwise_cosine_sim(set[0], set[1]) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pairwise_cosine_sim(set[3], set[0]) == 0.0);
    CHECK(pairwise_cosine_sim(set[3], set[3]) == 0.0);
    CHECK_THROWS_AS(pairwise_cosine_sim(set[0], Mask({2, 2}, {1, 0, 1, 0})), InvalidDimension);
}

TEST_CASE("similarity matrix agrees with the pairwise route and is symmetric") {
    std::mt19937_64 rng(2);
    std::vector<Mask> masks;
    for (int i = 0; i < 9; ++i) masks.push_back(vitcx::testing::random_mask({13, 11}, rng, i % 3 == 0 ? 0.6 : 0.0));
    masks.push_back(Mask::filled({13, 11}, 0.0f));
    const MaskSet set(std::move(masks), MaskProvenance::vit);
    const auto sim = similarity_matrix(set);
    const std::size_t n = set.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(sim[i * n + j] == sim[j * n + i]);
            CHECK(sim[i * n + j] == doctest::Approx(pairwise_cosine_sim(set[i], set[j])).epsilon(1e-9));
        }
    }
}

TEST_CASE("mean pairwise similarity") {
    CHECK(mean_pairwise_sim(flat_set({{0.2f, 0.4f}, {0.2f, 0.4f}, {0.2f, 0.4f}})) == doctest::Approx(1.0));
    // Pairs: ([1,0],[0,1]) = 0, ([1,0],[1,1]) = 1/sqrt2, ([0,1],[1,1]) = 1/sqrt2.
    const double expected = (0.0 + 2.0 / std::sqrt(2.0)) / 3.0;
    CHECK(mean_pairwise_sim(flat_set({{1, 0}, {0, 1}, {1, 1}})) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.4714).epsilon(1e-4));
    CHECK_THROWS_AS(mean_pairwise_sim(flat_set({{1, 0}})), InvalidArgument);
}

TEST_CASE("clustering: tiny delta keeps singletons, duplicates merge") {
    const auto set = flat_set({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}});
    CHECK(agglomerative_cluster(set, {1e-3}).size() == 4);

    const auto dup = flat_set({{0.3f, 0.9f, 0.1f}, {1, 0, 0}, {0.3f, 0.9f, 0.1f}});
    const Clusters c = agglomerative_cluster(dup, {0.01});
    REQUIRE(c.size() == 2);
    CHECK(c[0] == std::vector<std::size_t>{0, 2});
    CHECK(c[1] == std::vector<std::size_t>{1});
}

TEST_CASE("clustering on a hand-built distance matrix") {
    // A-B tight, C near B, D-E tight, everything else far.
    //               A     B     C     D     E
    const std::vector<double> d = {0.00, 0.10, 0.34, 0.80, 0.85,  //
                                   0.10, 0.00, 0.20, 0.82, 0.90,  //
                                   0.34, 0.20, 0.00, 0.75, 0.80,  //
                                   0.80, 0.82, 0.75, 0.00, 0.18,  //
                                   0.85, 0.90, 0.80, 0.18, 0.00};
    const auto oracle = brute_force_average_linkage(d, 5, 0.3);
    REQUIRE(oracle.size() == 1);
    const Clusters got = agglomerative_cluster(d, 5, 0.3);
    CHECK(canonical(got) == *oracle.begin());
    CHECK(got == Clusters{{0, 1, 2}, {3, 4}});
}

TEST_CASE("clustering matches the exhaustive reference on random small sets") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 150; ++trial) {
        const std::size_t n = 1 + rng() % 6;
        std::vector<Mask> masks;
        const double sparsity = u(rng) * 0.8;
        for (std::size_t i = 0; i < n; ++i) masks.push_back(vitcx::testing::random_mask({5, 6}, rng, sparsity));
        const MaskSet set(std::move(masks), MaskProvenance::vit);
        const double delta = 0.5 * u(rng);
        const auto dist = cosine_distances(set);
        if (vitcx::testing::threshold_margin(dist, n, delta) < 1e-9) continue;
        const auto reference = brute_force_average_linkage(dist, n, delta, 1e-12);
        CHECK(reference.count(canonical(agglomerative_cluster(set, {delta}))) == 1);
        ++checked;
    }
    CHECK(checked > 140);
}

TEST_CASE("cluster count is non-increasing in delta") {
    std::mt19937_64 rng(23);
    std::vector<Mask> masks;
    for (int i = 0; i < 30; ++i) masks.push_back(vitcx::testing::random_mask({8, 8}, rng, 0.3));
    const MaskSet set(std::move(masks), MaskProvenance::vit);
    std::size_t previous = set.size() + 1;
    for (double delta = 0.0; delta <= 1.0; delta += 0.02) {
        const std::size_t k = agglomerative_cluster(set, {delta}).size();
        CHECK(k <= previous);
        previous = k;
    }
    CHECK(agglomerative_cluster(set, {2.0}).size() == 1);
}

TEST_CASE("cluster means") {
    const auto set = flat_set({{0, 1}, {1, 0}, {0.5f, 0.5f}});
    const MaskSet same = cluster_means(set, {{0}, {1}, {2}});
    REQUIRE(same.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same[i] == set[i]);
    CHECK(same.provenance() == MaskProvenance::clustered);

    const MaskSet merged = cluster_means(set, {{0, 1}, {2}});
    REQUIRE(merged.size() == 2);
    CHECK(merged[0].values()[0] == 0.5f);
    CHECK(merged[0].values()[1] == 0.5f);

    CHECK_THROWS_AS(cluster_means(set, {{0, 1}}), InvalidArgument);
    CHECK_THROWS_AS(cluster_means(set, {{0, 1}, {1, 2}}), InvalidArgument);
    CHECK_THROWS_AS(cluster_means(set, {{0, 1, 2}, {}}), InvalidArgument);
    CHECK_THROWS_AS(cluster_means(set, {{0, 1, 5}}), InvalidArgument);
}

TEST_CASE("cluster means preserve the size-weighted per-pixel mean") {
    std::mt19937_64 rng(31);
    std::vector<Mask> masks;
    for (int i = 0; i < 40; ++i) masks.push_back(vitcx::testing::random_mask({6, 7}, rng, 0.2));
    const MaskSet set(std::move(masks), MaskProvenance::vit);
    const Clusters clusters = agglomerative_cluster(set, {0.25});
    const MaskSet means = cluster_means(set, clusters);
    for (std::size_t p = 0; p < set.shape().area(); ++p) {
        double all = 0.0, weighted = 0.0;
        for (const auto& m : set.masks()) all += m[p];
        for (std::size_t k = 0; k < clusters.size(); ++k) weighted += means[k][p] * static_cast<double>(clusters[k].size());
        CHECK(weighted / 40.0 == doctest::Approx(all / 40.0).epsilon(1e-6));
    }
}

TEST_CASE("random masks") {
    RandomMaskConfig cfg;
    cfg.count = 20;
    cfg.seed = 99;
    const MaskSet a = random_masks(cfg, {24, 20});
    const MaskSet b = random_masks(cfg, {24, 20});
    REQUIRE(a.size() == 20);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK(a.provenance() == MaskProvenance::random);
    CHECK(random_mask_at(cfg, {24, 20}, 7) == a[7]);

    cfg.seed = 100;
    const MaskSet c = random_masks(cfg, {24, 20});
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= !(a[i] == c[i]);
    CHECK(differs);

    cfg.keep_prob = 1.0;
    CHECK_THROWS_AS(random_masks(cfg, {24, 20}), InvalidArgument);
    cfg.keep_prob = 0.0;
    CHECK_THROWS_AS(random_masks(cfg, {24, 20}), InvalidArgument);
}

TEST_CASE("random masks at the ablation count") {
    RandomMaskConfig cfg;
    cfg.count = 5000;
    cfg.grid = 4;
    const MaskSet set = random_masks(cfg, {16, 16});
    CHECK(set.size() == 5000);
    double mean = 0.0;
    for (const auto& m : set.masks()) {
        for (float v : m.values()) mean += v;
    }
    mean /= 5000.0 * 256.0;
    CHECK(mean == doctest::Approx(0.5).epsilon(0.05));
}

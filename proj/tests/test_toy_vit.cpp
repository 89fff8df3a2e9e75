#include <numeric>

#include "doctest.h"
#include "test_support.hpp"
#include "vitcx/error.hpp"
#include "vitcx/toy_vit.hpp"

using namespace vitcx;
using namespace vitcx::testing;

TEST_CASE("default toy info") {
    ToyViTOracle toy;
    const OracleInfo info = toy.info();
    CHECK(info.input_height == 32);
    CHECK(info.input_width == 32);
    CHECK(info.channels == 3);
    CHECK(info.num_classes == 10);
    REQUIRE(info.available_blocks.size() == 2);
    CHECK(info.available_blocks[1].block_index == 1);
    CHECK(info.available_blocks[1].grid_side == 4);
    CHECK(info.available_blocks[1].dim == 16);
    CHECK(info.score_semantics == ScoreSemantics::softmax);
}

TEST_CASE("config validation") {
    ToyViTConfig cfg;
    cfg.patch_size = 5;
    CHECK_THROWS_AS(cfg.validate(), InvalidGeometry);
    cfg = {};
    cfg.num_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = {};
    cfg.num_blocks = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("forward is deterministic and well formed") {
    const ToyViTConfig cfg;
    const Image img = random_image(32, 32, 3, 1);
    const ToyForward a = toy_vit_forward(cfg, img);
    const ToyForward b = toy_vit_forward(cfg, img);
    CHECK(a.logits == b.logits);
    REQUIRE(a.probabilities.size() == 10);
    CHECK(std::accumulate(a.probabilities.begin(), a.probabilities.end(), 0.0) == doctest::Approx(1.0));
    REQUIRE(a.block_embeddings.size() == 2);
    CHECK(a.block_embeddings[0].num_patches() == 16);
    CHECK(a.block_embeddings[0].dim() == 16);
    REQUIRE(a.attention.size() == 2);
    REQUIRE(a.attention[0].size() == 2);
    for (const auto& block : a.attention) {
        for (const auto& head : block) {
            for (int r = 0; r < 16; ++r) {
                double row = 0.0;
                for (int c = 0; c < 16; ++c) {
                    CHECK(head(r, c) >= 0.0f);
                    row += head(r, c);
                }
                CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("different seeds give different models, inputs matter") {
    ToyViTConfig other;
    other.weight_seed = 8;
    const Image img = random_image(32, 32, 3, 2);
    CHECK(toy_vit_forward({}, img).logits != toy_vit_forward(other, img).logits);
    const Image zeros(32, 32, 3, std::vector<float>(3072, 0.0f));
    CHECK(toy_vit_forward({}, img).logits != toy_vit_forward({}, zeros).logits);
}

TEST_CASE("oracle scores match the forward pass under both semantics") {
    const Image img = random_image(32, 32, 3, 3);
    ToyViTOracle soft;
    const Tensor3 batch[] = {img.tensor()};
    const auto fwd = toy_vit_forward({}, img);
    CHECK(soft.score_batch(batch, 4)[0] == fwd.probabilities[4]);
    ToyViTConfig cfg;
    cfg.score_semantics = ScoreSemantics::logit;
    ToyViTOracle logit(cfg);
    CHECK(logit.score_batch(batch, 4)[0] == fwd.logits[4]);
    CHECK(logit.info().score_semantics == ScoreSemantics::logit);

    const auto pred = soft.predict_batch(batch);
    REQUIRE(pred.size() == 1);
    CHECK(pred[0].scores == fwd.probabilities);

    CHECK_THROWS_AS(soft.score_batch(batch, 10), InvalidArgument);
    const Tensor3 wrong[] = {Tensor3(16, 16, 3)};
    CHECK_THROWS_AS(soft.score_batch(wrong, 0), InvalidGeometry);
    CHECK_THROWS_AS(soft.embeddings(img, 2), InvalidArgument);
    CHECK(soft.embeddings(img, 1).values().size() == fwd.block_embeddings[1].values().size());
}

TEST_CASE("without position embeddings the model is patch-permutation invariant") {
    ToyViTConfig cfg;
    cfg.position_embeddings = false;
    const Image img = random_image(32, 32, 3, 5);
    // Swap patch (0,0) with patch (3,2).
    std::vector<float> v(img.tensor().values().begin(), img.tensor().values().end());
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const std::size_t a = (static_cast<std::size_t>(r) * 32 + c) * 3 + ch;
                const std::size_t b = (static_cast<std::size_t>(r + 24) * 32 + c + 16) * 3 + ch;
                std::swap(v[a], v[b]);
            }
        }
    }
    const Image swapped(32, 32, 3, std::move(v));
    const auto a = toy_vit_forward(cfg, img).logits;
    const auto b = toy_vit_forward(cfg, swapped).logits;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));

    // Patch 0 and patch 14 (row 3, column 2) swap rows in every block's embeddings.
    const auto ea = toy_vit_forward(cfg, img).block_embeddings;
    const auto eb = toy_vit_forward(cfg, swapped).block_embeddings;
    for (std::size_t blk = 0; blk < ea.size(); ++blk) {
        const int d = ea[blk].dim();
        for (int n = 0; n < 16; ++n) {
            const int m = n == 0 ? 14 : (n == 14 ? 0 : n);
            for (int k = 0; k < d; ++k) {
                CHECK(eb[blk].values()[static_cast<std::size_t>(m) * d + k] ==
                      doctest::Approx(ea[blk].values()[static_cast<std::size_t>(n) * d + k]).epsilon(1e-5).scale(1.0));
            }
        }
    }
    CHECK(toy_vit_forward({}, img).logits != toy_vit_forward({}, swapped).logits);
}

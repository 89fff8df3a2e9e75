#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "vitcx/oracle.hpp"
#include "vitcx/tensor.hpp"

namespace vitcx {

// Desk-scale vision transformer with seeded random weights. No class token:
// the head reads the mean of the patch tokens.
struct ToyViTConfig {
    int image_size = 32;
    int patch_size = 8;
    int channels = 3;
    int dim = 16;
    int num_blocks = 2;
    int num_heads = 2;
    int num_classes = 10;
    int mlp_ratio = 4;
    std::uint64_t weight_seed = 7;
    double weight_std = 0.02;
    bool position_embeddings = true;
    ScoreSemantics score_semantics = ScoreSemantics::softmax;

    int grid_side() const { return image_size / patch_size; }
    int num_patches() const { return grid_side() * grid_side(); }
    void validate() const;
};

struct ToyForward {
    // Residual stream after the attention sub-layer of each block.
    std::vector<EmbeddingBlock> block_embeddings;
    // attention[block][head] is an N x N row-stochastic matrix.
    std::vector<std::vector<Map2D>> attention;
    std::vector<double> logits;
    std::vector<double> probabilities;
};

class ToyViT {
public:
    explicit ToyViT(ToyViTConfig cfg);
    ~ToyViT();
    ToyViT(ToyViT&&) noexcept;
    ToyViT& operator=(ToyViT&&) noexcept;

    const ToyViTConfig& config() const { return cfg_; }
    OracleInfo info() const;

    // Throws InvalidGeometry when the tensor does not match the configured input.
    ToyForward forward(const Tensor3& image) const;

private:
    struct Weights;
    ToyViTConfig cfg_;
    std::unique_ptr<Weights> weights_;
};

ToyForward toy_vit_forward(const ToyViTConfig& cfg, const Image& image);

// In-process oracle over a ToyViT. Pure and thread-safe.
class ToyViTOracle : public ModelOracle {
public:
    explicit ToyViTOracle(ToyViTConfig cfg = {});

    OracleInfo info() override;
    EmbeddingBlock embeddings(const Image& image, int block_index) override;
    std::vector<double> score_batch(std::span<const Tensor3> images, int target) override;
    std::vector<ScoreVector> predict_batch(std::span<const Tensor3> images) override;

    const ToyViT& model() const { return model_; }

private:
    ToyViT model_;
};

}  // namespace vitcx

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitcx/tensor.hpp"

namespace vitcx {

enum class ScoreSemantics { softmax, logit };

std::string_view to_string(ScoreSemantics s);
ScoreSemantics parse_score_semantics(std::string_view s);

struct BlockInfo {
    int block_index = 0;
    int grid_side = 0;
    int dim = 0;

    bool operator==(const BlockInfo&) const = default;
};

struct OracleInfo {
    int input_height = 0;
    int input_width = 0;
    int channels = 0;
    int num_classes = 0;
    std::vector<BlockInfo> available_blocks;
    ScoreSemantics score_semantics = ScoreSemantics::softmax;

    Shape2 input_shape() const { return {input_height, input_width}; }
    const BlockInfo& block(int block_index) const;
    // Throws InvalidArgument on an inconsistent description.
    void validate() const;

    bool operator==(const OracleInfo&) const = default;
};

// A classifier that can be queried for class scores and for the patch
// embeddings of a transformer block. Implementations are not required to be
// thread-safe; use one instance per thread.
class ModelOracle {
public:
    virtual ~ModelOracle() = default;

    virtual OracleInfo info() = 0;

    // N x D patch-token embeddings tapped after the attention residual of
    // `block_index`.
    virtual EmbeddingBlock embeddings(const Image& image, int block_index) = 0;

    // Score of class `target` for every image, in input order.
    virtual std::vector<double> score_batch(std::span<const Tensor3> images, int target) = 0;

    // Full class score vector for every image.
    virtual std::vector<ScoreVector> predict_batch(std::span<const Tensor3> images) = 0;
};

// Checks a batch against the oracle's input geometry.
void check_batch_geometry(const OracleInfo& info, std::span<const Tensor3> images);

}  // namespace vitcx

#include "vitcx/toy_vit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "vitcx/error.hpp"

namespace vitcx {

namespace {

using Mat = Eigen::MatrixXf;
using RowVec = Eigen::RowVectorXf;

Mat gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double std) {
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std));
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    }
    return m;
}

// Row-wise layer norm with unit gain and zero bias.
Mat layer_norm(const Mat& x) {
    constexpr float kEps = 1e-6f;
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const float mean = x.row(i).mean();
        const RowVec centered = x.row(i).array() - mean;
        const float var = centered.squaredNorm() / static_cast<float>(x.cols());
        out.row(i) = centered / std::sqrt(var + kEps);
    }
    return out;
}

void softmax_rows(Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const float mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

float gelu(float v) { return 0.5f * v * (1.0f + std::erf(v / std::sqrt(2.0f))); }

}  // namespace

struct ToyViT::Weights {
    struct Block {
        Mat w_qkv;  // D x 3D
        Mat w_out;  // D x D
        Mat w_fc1;  // D x hidden
        RowVec b_fc1;
        Mat w_fc2;  // hidden x D
        RowVec b_fc2;
    };
    Mat w_embed;  // (p*p*C) x D
    RowVec b_embed;
    Mat position;  // N x D
    std::vector<Block> blocks;
    Mat w_head;  // D x classes
    RowVec b_head;
};

void ToyViTConfig::validate() const {
    if (image_size < 1 || patch_size < 1 || channels < 1) throw InvalidGeometry("toy ViT geometry must be positive");
    if (image_size % patch_size != 0) throw InvalidGeometry("image_size must be divisible by patch_size");
    if (dim < 1 || num_blocks < 1 || num_heads < 1 || num_classes < 1 || mlp_ratio < 1) {
        throw InvalidArgument("toy ViT sizes must be positive");
    }
    if (dim % num_heads != 0) throw InvalidArgument("dim must be divisible by num_heads");
    if (!(weight_std >= 0.0)) throw InvalidArgument("weight_std must be >= 0");
}

ToyViT::ToyViT(ToyViTConfig cfg) : cfg_(cfg), weights_(std::make_unique<Weights>()) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.weight_seed);
    const double s = cfg_.weight_std;
    const Eigen::Index d = cfg_.dim;
    const Eigen::Index patch_len = static_cast<Eigen::Index>(cfg_.patch_size) * cfg_.patch_size * cfg_.channels;
    const Eigen::Index hidden = d * cfg_.mlp_ratio;

    auto& w = *weights_;
    w.w_embed = gaussian(rng, patch_len, d, s);
    w.b_embed = RowVec::Zero(d);
    w.position = gaussian(rng, cfg_.num_patches(), d, s);
    if (!cfg_.position_embeddings) w.position.setZero();
    for (int b = 0; b < cfg_.num_blocks; ++b) {
        Weights::Block blk;
        blk.w_qkv = gaussian(rng, d, 3 * d, s);
        blk.w_out = gaussian(rng, d, d, s);
        blk.w_fc1 = gaussian(rng, d, hidden, s);
        blk.b_fc1 = RowVec::Zero(hidden);
        blk.w_fc2 = gaussian(rng, hidden, d, s);
        blk.b_fc2 = RowVec::Zero(d);
        w.blocks.push_back(std::move(blk));
    }
    w.w_head = gaussian(rng, d, cfg_.num_classes, s);
    w.b_head = RowVec::Zero(cfg_.num_classes);
}

ToyViT::~ToyViT() = default;
ToyViT::ToyViT(ToyViT&&) noexcept = default;
ToyViT& ToyViT::operator=(ToyViT&&) noexcept = default;

OracleInfo ToyViT::info() const {
    OracleInfo info;
    info.input_height = cfg_.image_size;
    info.input_width = cfg_.image_size;
    info.channels = cfg_.channels;
    info.num_classes = cfg_.num_classes;
    for (int b = 0; b < cfg_.num_blocks; ++b) info.available_blocks.push_back({b, cfg_.grid_side(), cfg_.dim});
    info.score_semantics = cfg_.score_semantics;
    return info;
}

ToyForward ToyViT::forward(const Tensor3& image) const {
    if (image.height() != cfg_.image_size || image.width() != cfg_.image_size || image.channels() != cfg_.channels) {
        throw InvalidGeometry("image does not match toy ViT input geometry");
    }
    const auto& w = *weights_;
    const int g = cfg_.grid_side();
    const int p = cfg_.patch_size;
    const int n = cfg_.num_patches();
    const int d = cfg_.dim;
    const int heads = cfg_.num_heads;
    const int dh = d / heads;

    Mat patches(n, w.w_embed.rows());
    for (int pr = 0; pr < g; ++pr) {
        for (int pc = 0; pc < g; ++pc) {
            const int j = pr * g + pc;
            Eigen::Index k = 0;
            for (int r = 0; r < p; ++r) {
                for (int c = 0; c < p; ++c) {
                    for (int ch = 0; ch < cfg_.channels; ++ch) patches(j, k++) = image(pr * p + r, pc * p + c, ch);
                }
            }
        }
    }

    Mat x = patches * w.w_embed;
    x.rowwise() += w.b_embed;
    x += w.position;

    ToyForward out;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    for (int b = 0; b < cfg_.num_blocks; ++b) {
        const auto& blk = w.blocks[static_cast<std::size_t>(b)];
        const Mat h = layer_norm(x);
        const Mat qkv = h * blk.w_qkv;
        Mat attended(n, d);
        std::vector<Map2D> head_maps;
        for (int hd = 0; hd < heads; ++hd) {
            const auto q = qkv.middleCols(hd * dh, dh);
            const auto k = qkv.middleCols(d + hd * dh, dh);
            const auto v = qkv.middleCols(2 * d + hd * dh, dh);
            Mat att = (q * k.transpose()) * scale;
            softmax_rows(att);
            attended.middleCols(hd * dh, dh) = att * v;
            Map2D map({n, n});
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) map(i, j) = att(i, j);
            }
            head_maps.push_back(std::move(map));
        }
        x += attended * blk.w_out;
        out.attention.push_back(std::move(head_maps));

        std::vector<float> tap(static_cast<std::size_t>(n) * d);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) tap[static_cast<std::size_t>(i) * d + j] = x(i, j);
        }
        out.block_embeddings.emplace_back(n, d, b, std::move(tap));

        Mat hidden = layer_norm(x) * blk.w_fc1;
        hidden.rowwise() += blk.b_fc1;
        hidden = hidden.unaryExpr([](float v) { return gelu(v); });
        Mat mlp = hidden * blk.w_fc2;
        mlp.rowwise() += blk.b_fc2;
        x += mlp;
    }

    const RowVec pooled = layer_norm(x).colwise().mean();
    RowVec logits = pooled * w.w_head;
    logits += w.b_head;

    out.logits.assign(logits.data(), logits.data() + logits.size());
    const double mx = *std::max_element(out.logits.begin(), out.logits.end());
    double total = 0.0;
    out.probabilities.resize(out.logits.size());
    for (std::size_t i = 0; i < out.logits.size(); ++i) {
        out.probabilities[i] = std::exp(out.logits[i] - mx);
        total += out.probabilities[i];
    }
    for (auto& v : out.probabilities) v /= total;
    return out;
}

ToyForward toy_vit_forward(const ToyViTConfig& cfg, const Image& image) { return ToyViT(cfg).forward(image.tensor()); }

ToyViTOracle::ToyViTOracle(ToyViTConfig cfg) : model_(cfg) {}

OracleInfo ToyViTOracle::info() { return model_.info(); }

EmbeddingBlock ToyViTOracle::embeddings(const Image& image, int block_index) {
    if (block_index < 0 || block_index >= model_.config().num_blocks) {
        throw InvalidArgument("toy ViT has no block " + std::to_string(block_index));
    }
    auto fwd = model_.forward(image.tensor());
    return std::move(fwd.block_embeddings[static_cast<std::size_t>(block_index)]);
}

std::vector<double> ToyViTOracle::score_batch(std::span<const Tensor3> images, int target) {
    if (target < 0 || target >= model_.config().num_classes) throw InvalidArgument("target class out of range");
    std::vector<double> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        const auto fwd = model_.forward(img);
        const auto& scores =
            model_.config().score_semantics == ScoreSemantics::softmax ? fwd.probabilities : fwd.logits;
        out.push_back(scores[static_cast<std::size_t>(target)]);
    }
    return out;
}

std::vector<ScoreVector> ToyViTOracle::predict_batch(std::span<const Tensor3> images) {
    std::vector<ScoreVector> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        auto fwd = model_.forward(img);
        ScoreVector sv;
        sv.scores = model_.config().score_semantics == ScoreSemantics::softmax ? std::move(fwd.probabilities)
                                                                              : std::move(fwd.logits);
        sv.target_class = sv.top1();
        out.push_back(std::move(sv));
    }
    return out;
}

}  // namespace vitcx

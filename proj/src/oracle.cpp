#include "vitcx/oracle.hpp"

#include "vitcx/error.hpp"

namespace vitcx {

std::string_view to_string(ScoreSemantics s) { return s == ScoreSemantics::softmax ? "softmax" : "logit"; }

ScoreSemantics parse_score_semantics(std::string_view s) {
    if (s == "softmax") return ScoreSemantics::softmax;
    if (s == "logit") return ScoreSemantics::logit;
    throw InvalidArgument("unknown score semantics '" + std::string(s) + "'");
}

const BlockInfo& OracleInfo::block(int block_index) const {
    for (const auto& b : available_blocks) {
        if (b.block_index == block_index) return b;
    }
    throw InvalidArgument("oracle has no block " + std::to_string(block_index));
}

void OracleInfo::validate() const {
    if (input_height < 1 || input_width < 1 || channels < 1) throw InvalidArgument("oracle input geometry invalid");
    if (num_classes < 1) throw InvalidArgument("oracle must expose at least one class");
    if (available_blocks.empty()) throw InvalidArgument("oracle must expose at least one block");
    for (const auto& b : available_blocks) {
        if (b.grid_side < 1 || b.dim < 1) throw InvalidArgument("oracle block geometry invalid");
    }
}

void check_batch_geometry(const OracleInfo& info, std::span<const Tensor3> images) {
    for (const auto& img : images) {
        if (img.height() != info.input_height || img.width() != info.input_width || img.channels() != info.channels) {
            throw InvalidGeometry("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
                                   std::to_string(img.channels()) + " does not match oracle input " +
                                   std::to_string(info.input_height) + "x" + std::to_string(info.input_width) + "x" +
                                   std::to_string(info.channels));
        }
    }
}

}  // namespace vitcx

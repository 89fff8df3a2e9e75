#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vitcx/tensor.hpp"

namespace vitcx {

// VCX1 raw map format: "VCX1", u32 LE height, u32 LE width, then
// height*width float32 LE values in row-major order.
std::vector<std::uint8_t> encode_vcx1(const Map2D& map);
Map2D decode_vcx1(std::span<const std::uint8_t> bytes);

void write_vcx1(const std::filesystem::path& path, const Map2D& map);
Map2D read_vcx1(const std::filesystem::path& path);

// Little-endian helpers shared with the oracle wire format.
void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint32_t read_u32_le(const std::uint8_t* p);
void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values);
std::vector<float> read_f32_le(std::span<const std::uint8_t> bytes);

}  // namespace vitcx

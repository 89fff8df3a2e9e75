#include "vitcx/raw_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vitcx/error.hpp"

namespace vitcx {

namespace {
constexpr std::uint8_t kMagic[4] = {'V', 'C', 'X', '1'};
constexpr std::size_t kHeaderBytes = 12;
}  // namespace

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t read_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values) {
    out.reserve(out.size() + values.size() * 4);
    for (float v : values) append_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

std::vector<float> read_f32_le(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % 4 != 0) throw ProtocolError("float32 payload length is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(read_u32_le(bytes.data() + 4 * i));
    return out;
}

std::vector<std::uint8_t> encode_vcx1(const Map2D& map) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    append_u32_le(out, static_cast<std::uint32_t>(map.height()));
    append_u32_le(out, static_cast<std::uint32_t>(map.width()));
    append_f32_le(out, map.values());
    return out;
}

Map2D decode_vcx1(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError("not a VCX1 file");
    }
    const std::uint32_t h = read_u32_le(bytes.data() + 4);
    const std::uint32_t w = read_u32_le(bytes.data() + 8);
    const std::uint64_t expected = kHeaderBytes + 4ull * h * w;
    if (bytes.size() != expected) throw IoError("VCX1 payload size does not match header");
    return Map2D({static_cast<int>(h), static_cast<int>(w)}, read_f32_le(bytes.subspan(kHeaderBytes)));
}

void write_vcx1(const std::filesystem::path& path, const Map2D& map) {
    const auto bytes = encode_vcx1(map);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

Map2D read_vcx1(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_vcx1(bytes);
}

}  // namespace vitcx

#pragma once

// Binary tensor file shared by labeler weights, LoRA adapters and plain
// weight matrices:
//   bytes 0..7   ASCII magic "LLMBDA01"
//   bytes 8..15  header length H, unsigned 64-bit little-endian
//   next H bytes UTF-8 JSON header (must carry "count": number of doubles)
//   remainder    `count` IEEE-754 doubles, little-endian

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/stream_io.hpp"

namespace llambda {

inline constexpr std::string_view kBlobMagic = "LLMBDA01";

struct BlobFile {
    nlohmann::json header;
    std::vector<double> payload;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(std::string_view in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    return v;
}

} // namespace detail

inline std::string encode_blob(nlohmann::json header, std::span<const double> payload) {
    header["count"] = payload.size();
    const std::string head = header.dump();
    std::string out(kBlobMagic);
    detail::put_u64_le(out, head.size());
    out += head;
    out.reserve(out.size() + payload.size() * 8);
    for (double v : payload) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline BlobFile decode_blob(std::string_view bytes) {
    if (bytes.size() < 16 || bytes.substr(0, 8) != kBlobMagic) throw IoError("not a weight file (bad magic)");
    const std::uint64_t head_len = detail::get_u64_le(bytes, 8);
    if (head_len > bytes.size() - 16) throw IoError("truncated weight file header");
    BlobFile blob;
    try {
        blob.header = nlohmann::json::parse(bytes.substr(16, head_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed weight file header: ") + e.what());
    }
    const auto count = blob.header.value("count", std::uint64_t{0});
    const std::size_t offset = 16 + head_len;
    if ((bytes.size() - offset) != count * 8) throw IoError("weight file payload size mismatch");
    blob.payload.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        blob.payload[i] = std::bit_cast<double>(detail::get_u64_le(bytes, offset + 8 * i));
    }
    return blob;
}

inline void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                       std::span<const double> payload) {
    detail::write_file(path, encode_blob(header, payload));
}

inline BlobFile read_blob(const std::filesystem::path& path) {
    return decode_blob(detail::read_file(path));
}

inline std::string expect_kind(const BlobFile& blob, std::string_view kind) {
    const auto actual = blob.header.value("kind", std::string{});
    if (actual != kind) {
        throw IoError("weight file kind is '" + actual + "', expected '" + std::string(kind) + "'");
    }
    return actual;
}

} // namespace llambda

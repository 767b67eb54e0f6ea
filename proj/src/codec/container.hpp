#pragma once

#include <zlib.h>

#include <cstdint>
#include <string>
#include <vector>

#include "core/error.hpp"

// Self-describing byte container for one compressed image. Layout, all
// little-endian:
//   "FSDF" | version u8 | img_w u16 | img_h u16 | code_channels u8 |
//   code_h u16 | code_w u16 | lambda_id u8 | caption_len u16 | caption |
//   payload_len u32 | payload | crc u32
// The trailing crc covers every preceding byte plus the crc of the
// frequency tables the decoder will use, so both corruption and a
// mismatched model are rejected before any decoding happens.
namespace fasdiff::codec {

constexpr char kMagic[4] = {'F', 'S', 'D', 'F'};
constexpr uint8_t kFormatVersion = 1;

struct StreamHeader {
    uint16_t img_w = 0;
    uint16_t img_h = 0;
    uint8_t code_channels = 0;
    uint16_t code_h = 0;
    uint16_t code_w = 0;
    uint8_t lambda_id = 0;
    std::string caption;
};

namespace detail {

inline void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }
inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v & 0xFF));
    b.push_back(static_cast<uint8_t>(v >> 8));
}
inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

struct Reader {
    const uint8_t* p;
    size_t n;
    size_t pos = 0;

    uint8_t u8() {
        check_data(pos + 1 <= n, "stream truncated");
        return p[pos++];
    }
    uint16_t u16() {
        check_data(pos + 2 <= n, "stream truncated");
        uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        check_data(pos + 4 <= n, "stream truncated");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

}  // namespace detail

inline uint32_t tables_crc(const std::vector<std::vector<uint16_t>>& tables) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& t : tables)
        for (uint16_t f : t) {
            uint8_t le[2] = {static_cast<uint8_t>(f & 0xFF), static_cast<uint8_t>(f >> 8)};
            crc = crc32(crc, le, 2);
        }
    return static_cast<uint32_t>(crc);
}

inline std::vector<uint8_t> write_stream(const StreamHeader& h, const std::vector<uint8_t>& payload,
                                         uint32_t table_crc) {
    check_arg(h.caption.size() <= 0xFFFF, "caption too long");
    check_arg(payload.size() <= 0xFFFFFFFFull, "payload too long");
    std::vector<uint8_t> out;
    out.reserve(payload.size() + h.caption.size() + 32);
    out.insert(out.end(), kMagic, kMagic + 4);
    detail::put_u8(out, kFormatVersion);
    detail::put_u16(out, h.img_w);
    detail::put_u16(out, h.img_h);
    detail::put_u8(out, h.code_channels);
    detail::put_u16(out, h.code_h);
    detail::put_u16(out, h.code_w);
    detail::put_u8(out, h.lambda_id);
    detail::put_u16(out, static_cast<uint16_t>(h.caption.size()));
    out.insert(out.end(), h.caption.begin(), h.caption.end());
    detail::put_u32(out, static_cast<uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());

    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data(), static_cast<uInt>(out.size()));
    uint8_t tc[4];
    for (int i = 0; i < 4; ++i) tc[i] = static_cast<uint8_t>((table_crc >> (8 * i)) & 0xFF);
    crc = crc32(crc, tc, 4);
    detail::put_u32(out, static_cast<uint32_t>(crc));
    return out;
}

struct ParsedStream {
    StreamHeader header;
    std::vector<uint8_t> payload;
};

inline ParsedStream parse_stream(const std::vector<uint8_t>& bytes, uint32_t table_crc) {
    detail::Reader r{bytes.data(), bytes.size()};
    check_data(bytes.size() >= 4 && std::equal(kMagic, kMagic + 4, bytes.data()), "not a compressed stream");
    r.pos = 4;
    uint8_t version = r.u8();
    check_data(version == kFormatVersion, "unsupported stream version " + std::to_string(version));
    ParsedStream out;
    out.header.img_w = r.u16();
    out.header.img_h = r.u16();
    out.header.code_channels = r.u8();
    out.header.code_h = r.u16();
    out.header.code_w = r.u16();
    out.header.lambda_id = r.u8();
    uint16_t cap_len = r.u16();
    check_data(r.pos + cap_len <= r.n, "stream truncated");
    out.header.caption.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), cap_len);
    r.pos += cap_len;
    uint32_t payload_len = r.u32();
    check_data(r.pos + payload_len + 4 == r.n, "stream length mismatch");
    out.payload.assign(bytes.begin() + static_cast<ptrdiff_t>(r.pos),
                       bytes.begin() + static_cast<ptrdiff_t>(r.pos + payload_len));
    r.pos += payload_len;

    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, bytes.data(), static_cast<uInt>(r.pos));
    uint8_t tc[4];
    for (int i = 0; i < 4; ++i) tc[i] = static_cast<uint8_t>((table_crc >> (8 * i)) & 0xFF);
    crc = crc32(crc, tc, 4);
    uint32_t stored = r.u32();
    check_data(static_cast<uint32_t>(crc) == stored, "stream checksum mismatch");
    return out;
}

}  // namespace fasdiff::codec

// Copyright 2026 The Spikefold Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "spikefold/data.hpp"

#include <cstdint>

namespace spikefold {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // 3-D uint8
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // 1-D uint8
constexpr std::size_t kCifarRecord = 3073;             // 1 label + 3*32*32 pixels

// Bounds-checked big-endian cursor.
struct BeReader {
    ByteSpan bytes;
    std::size_t pos = 0;

    std::uint32_t u32(const char* what) {
        if (bytes.size() - pos < 4 || bytes.size() < 4)
            throw ParseError(std::string("idx: truncated ") + what, pos);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[pos + static_cast<std::size_t>(i)];
        pos += 4;
        return v;
    }
};

// Guards n_items * item_size against overflow before any allocation.
std::size_t checked_payload(std::size_t a, std::size_t b, std::size_t c, std::size_t at) {
    constexpr std::size_t kMax = static_cast<std::size_t>(1) << 40;  // 1 TiB sanity cap
    if (a != 0 && b > kMax / a) throw ParseError("idx: dimension product overflows", at);
    const std::size_t ab = a * b;
    if (ab != 0 && c > kMax / ab) throw ParseError("idx: dimension product overflows", at);
    return ab * c;
}

}  // namespace

IdxImagesRaw parse_idx_images_raw(ByteSpan bytes) {
    BeReader r{bytes};
    const std::uint32_t magic = r.u32("magic");
    if (magic != kIdxImagesMagic)
        throw ParseError("idx: bad image magic 0x" + [magic] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }(), 0);
    IdxImagesRaw out;
    out.count = r.u32("image count");
    out.rows = r.u32("row count");
    out.cols = r.u32("column count");
    if (out.count > 0 && (out.rows == 0 || out.cols == 0))
        throw ParseError("idx: zero-sized image dimensions", 8);

    const std::size_t payload = checked_payload(out.count, out.rows, out.cols, 4);
    if (bytes.size() - r.pos < payload)
        throw ParseError("idx: payload of " + std::to_string(bytes.size() - r.pos) +
                             " bytes, header declares " + std::to_string(payload),
                         r.pos);
    if (bytes.size() - r.pos > payload)
        throw ParseError("idx: trailing bytes after declared payload", r.pos + payload);
    out.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos), bytes.end());
    return out;
}

std::vector<std::uint8_t> parse_idx_labels_raw(ByteSpan bytes) {
    BeReader r{bytes};
    const std::uint32_t magic = r.u32("magic");
    if (magic != kIdxLabelsMagic) throw ParseError("idx: bad label magic", 0);
    const std::size_t count = r.u32("label count");
    if (bytes.size() - r.pos < count)
        throw ParseError("idx: label payload of " + std::to_string(bytes.size() - r.pos) +
                             " bytes, header declares " + std::to_string(count),
                         r.pos);
    if (bytes.size() - r.pos > count)
        throw ParseError("idx: trailing bytes after declared payload", r.pos + count);
    return std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                                     bytes.end());
}

CifarRaw parse_cifar_raw(ByteSpan bytes) {
    if (bytes.size() % kCifarRecord != 0)
        throw ParseError("cifar: buffer length " + std::to_string(bytes.size()) +
                             " is not a multiple of the 3073-byte record",
                         bytes.size() - bytes.size() % kCifarRecord);
    CifarRaw out;
    out.count = bytes.size() / kCifarRecord;
    out.labels.reserve(out.count);
    out.pixels.reserve(out.count * (kCifarRecord - 1));
    for (std::size_t i = 0; i < out.count; ++i) {
        const std::size_t at = i * kCifarRecord;
        const std::uint8_t label = bytes[at];
        if (label > 9)
            throw ParseError("cifar: label byte " + std::to_string(label) + " out of range", at);
        out.labels.push_back(label);
        out.pixels.insert(out.pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(at + 1),
                          bytes.begin() + static_cast<std::ptrdiff_t>(at + kCifarRecord));
    }
    return out;
}

}  // namespace spikefold

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

#include "spikefold/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace spikefold {

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

std::uint8_t ByteReader::u8(const char* what) {
    if (remaining() < 1)
        throw ParseError(std::string("checkpoint: truncated reading ") + what, pos_);
    return bytes_[pos_++];
}

std::uint32_t ByteReader::u32(const char* what) {
    if (remaining() < 4)
        throw ParseError(std::string("checkpoint: truncated reading ") + what, pos_);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64(const char* what) {
    if (remaining() < 8)
        throw ParseError(std::string("checkpoint: truncated reading ") + what, pos_);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
}

double ByteReader::f64(const char* what) { return std::bit_cast<double>(u64(what)); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n, const char* what) {
    if (remaining() < n)
        throw ParseError(std::string("checkpoint: truncated reading ") + what, pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
}

void write_checkpoint_header(ByteWriter& w, const CheckpointHeader& h) {
    w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u8(static_cast<std::uint8_t>(h.mode));
    w.u8(static_cast<std::uint8_t>(h.dtype));
    w.u8(static_cast<std::uint8_t>(h.mpbn));
    w.u8(0);  // reserved
    w.u32(h.time_steps);
    w.f64(h.tau);
    w.f64(h.v_th);
    w.f64(h.eps);
    w.f64(h.momentum);
    w.u32(h.n_layers);
    w.u32(h.n_classes);
    w.u32(h.in_c);
    w.u32(h.in_h);
    w.u32(h.in_w);
}

CheckpointHeader read_checkpoint_header(ByteReader& r) {
    const auto magic = r.raw(sizeof kCheckpointMagic, "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw ParseError("checkpoint: bad magic (not a SNNCKPT1 file)", 0);
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version), 8);

    CheckpointHeader h;
    const std::uint8_t mode = r.u8("mode");
    if (mode > 1) throw ParseError("checkpoint: bad mode byte", r.pos() - 1);
    h.mode = static_cast<ModelMode>(mode);
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype > 1) throw ParseError("checkpoint: bad dtype byte", r.pos() - 1);
    h.dtype = static_cast<Dtype>(dtype);
    const std::uint8_t mpbn = r.u8("mpbn granularity");
    if (mpbn > 2) throw ParseError("checkpoint: bad mpbn byte", r.pos() - 1);
    h.mpbn = static_cast<MpbnMode>(mpbn);
    if (r.u8("reserved") != 0) throw ParseError("checkpoint: reserved byte not zero", r.pos() - 1);

    h.time_steps = r.u32("time steps");
    h.tau = r.f64("tau");
    h.v_th = r.f64("v_th");
    h.eps = r.f64("eps");
    h.momentum = r.f64("momentum");
    h.n_layers = r.u32("layer count");
    h.n_classes = r.u32("class count");
    h.in_c = r.u32("input channels");
    h.in_h = r.u32("input height");
    h.in_w = r.u32("input width");

    if (h.time_steps == 0 || h.time_steps > 4096)
        throw ParseError("checkpoint: bad time-step count", 16);
    if (!(h.tau > 0.0 && h.tau < 1.0) || !std::isfinite(h.tau))
        throw ParseError("checkpoint: tau outside (0,1)", 20);
    if (!(h.v_th > 0.0) || !std::isfinite(h.v_th))
        throw ParseError("checkpoint: non-positive v_th", 28);
    if (!(h.eps > 0.0) || !std::isfinite(h.eps))
        throw ParseError("checkpoint: non-positive eps", 36);
    if (!(h.momentum > 0.0 && h.momentum <= 1.0))
        throw ParseError("checkpoint: momentum outside (0,1]", 44);
    if (h.n_layers == 0 || h.n_layers > 4096)
        throw ParseError("checkpoint: bad layer count", 52);
    if (h.n_classes < 2 || h.n_classes > (1u << 20))
        throw ParseError("checkpoint: bad class count", 56);
    if (h.in_c == 0 || h.in_h == 0 || h.in_w == 0)
        throw ParseError("checkpoint: bad input shape", 60);
    return h;
}

CheckpointHeader peek_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    return read_checkpoint_header(r);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    f.seekg(0, std::ios::end);
    const auto len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw IoError("failed reading '" + path + "'");
    return bytes;
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace spikefold

// SPDX-License-Identifier: Apache-2.0
#include "relearn/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "relearn/errors.hpp"

namespace relearn {

namespace {

constexpr char kMagic[8] = {'R', 'L', 'R', 'N', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderSize = 8 + 4 + 8 + 4;

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (std::size_t off = 0; off < bytes.size(); off += 1u << 30) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (auto d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in_[pos_++]} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const auto rank = u64();
    if (rank > 8) throw CheckpointError("checkpoint tensor rank " + std::to_string(rank) + " is implausible");
    Shape shape;
    std::size_t total = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape.push_back(u64());
      if (shape.back() == 0 || shape.back() > remaining()) throw CheckpointError("checkpoint tensor extent is invalid");
      total *= shape.back();
    }
    need(total * 8);
    std::vector<double> data(total);
    for (auto& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::size_t remaining() const { return in_.size() - pos_; }
  void need(std::uint64_t n) const {
    if (n > remaining()) throw CheckpointError("checkpoint payload ends early at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  Writer p;
  p.u64(ck.generation);
  p.u64(ck.next_epoch);
  p.str(ck.config);
  p.u64(ck.model.layer_count());
  for (const auto& layer : ck.model.layers()) {
    p.str(layer.name);
    p.u8(static_cast<std::uint8_t>(layer.kind));
    p.u8(layer.probe_point);
    p.u8(layer.relu);
    p.u8(layer.pool);
    p.u64(layer.params.size());
    for (const auto& param : layer.params) {
      p.str(param.name);
      p.u8(static_cast<std::uint8_t>(param.role));
      p.u8(param.frozen);
      p.tensor(param.value);
    }
  }
  p.f64(ck.state.momentum);
  p.f64(ck.state.weight_decay);
  p.u64(ck.state.buffers.size());
  for (const auto& b : ck.state.buffers) p.tensor(b);

  const auto& payload = p.bytes();
  Writer h;
  for (char c : kMagic) h.u8(static_cast<std::uint8_t>(c));
  h.u32(kCheckpointVersion);
  h.u64(payload.size());
  h.u32(checksum(payload));
  auto out = std::move(h.bytes());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) throw CheckpointError("checkpoint truncated: header needs 24 bytes");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
  Reader h(bytes.subspan(8, kHeaderSize - 8));
  const auto version = h.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto length = h.u64();
  const auto crc = h.u32();
  const auto payload = bytes.subspan(kHeaderSize);
  if (payload.size() != length) {
    throw CheckpointError("checkpoint length mismatch: header declares " + std::to_string(length) +
                          " payload bytes, file has " + std::to_string(payload.size()));
  }
  if (checksum(payload) != crc) {
    throw CheckpointError("checkpoint checksum mismatch");
  }

  Reader r(payload);
  Checkpoint ck;
  ck.generation = r.u64();
  ck.next_epoch = r.u64();
  ck.config = r.str();
  const auto layers = r.u64();
  for (std::uint64_t l = 0; l < layers; ++l) {
    Layer layer;
    layer.name = r.str();
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::kClassifierHead)) throw CheckpointError("unknown layer kind");
    layer.kind = static_cast<LayerKind>(kind);
    layer.probe_point = r.u8() != 0;
    layer.relu = r.u8() != 0;
    layer.pool = r.u8() != 0;
    const auto params = r.u64();
    for (std::uint64_t i = 0; i < params; ++i) {
      Parameter p;
      p.name = r.str();
      const auto role = r.u8();
      if (role > static_cast<std::uint8_t>(ParamRole::kShift)) throw CheckpointError("unknown parameter role");
      p.role = static_cast<ParamRole>(role);
      p.frozen = r.u8() != 0;
      p.value = r.tensor();
      layer.params.push_back(std::move(p));
    }
    ck.model.add_layer(std::move(layer));
  }
  ck.state.momentum = r.f64();
  ck.state.weight_decay = r.f64();
  const auto buffers = r.u64();
  if (buffers != ck.model.param_count()) throw CheckpointError("checkpoint momentum buffers do not match parameters");
  for (std::uint64_t i = 0; i < buffers; ++i) {
    ck.state.buffers.push_back(r.tensor());
    if (ck.state.buffers.back().shape() != ck.model.param(i).value.shape()) {
      throw CheckpointError("checkpoint momentum buffer " + std::to_string(i) + " has the wrong shape");
    }
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing payload bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

}  // namespace relearn

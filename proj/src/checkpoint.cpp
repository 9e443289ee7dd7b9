#include "jointdiff/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace jointdiff {

namespace {

constexpr char kMagic[8] = {'J', 'D', 'I', 'F', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  int count(const char* what, std::uint32_t limit) {
    const std::uint32_t v = u32();
    if (v > limit)
      throw CheckpointError(std::string("checkpoint: implausible ") + what + " " +
                            std::to_string(v) + " at byte " + std::to_string(pos_ - 4));
    return static_cast<int>(v);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n)
      throw CheckpointError(std::string("checkpoint: truncated while reading ") + what +
                            " at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(ckpt.version);
  const auto& u = ckpt.unet;
  w.u32(static_cast<std::uint32_t>(u.depth));
  w.u32(static_cast<std::uint32_t>(u.base_channels));
  w.u32(static_cast<std::uint32_t>(u.channel_multipliers.size()));
  for (int m : u.channel_multipliers) w.u32(static_cast<std::uint32_t>(m));
  w.u32(static_cast<std::uint32_t>(u.input_channels));
  w.u32(static_cast<std::uint32_t>(u.image_side));
  w.u32(static_cast<std::uint32_t>(u.time_embed_dim));
  w.u32(static_cast<std::uint32_t>(ckpt.head.num_classes));
  w.u32(static_cast<std::uint32_t>(ckpt.head.hidden));
  w.u32(static_cast<std::uint32_t>(ckpt.schedule.steps));
  w.f64(ckpt.schedule.beta_start);
  w.f64(ckpt.schedule.beta_end);
  w.u64(ckpt.meta.step);
  w.u64(ckpt.meta.seed);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.metrics.size()));
  for (const auto& [k, v] : ckpt.meta.metrics) {
    w.str(k);
    w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.values.size() != numel(t.shape))
      throw CheckpointError("checkpoint: tensor '" + t.name + "' has " +
                            std::to_string(t.values.size()) + " values for shape " +
                            shape_str(t.shape));
    w.str(t.group);
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values) w.f32(v);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32_of(bytes);
  w.u32(crc);
  return std::move(bytes);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("checkpoint: bad magic (not a jointdiff checkpoint)");
  Reader r(bytes.subspan(sizeof kMagic));
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(c.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");

  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual)
    throw CheckpointError("checkpoint: checksum mismatch (stored " + std::to_string(stored) +
                          ", computed " + std::to_string(actual) + ")");

  Reader p(body.subspan(sizeof kMagic + 4));
  c.unet.depth = static_cast<int>(p.u32());
  c.unet.base_channels = static_cast<int>(p.u32());
  const int nm = p.count("multiplier count", 64);
  c.unet.channel_multipliers.resize(static_cast<std::size_t>(nm));
  for (auto& m : c.unet.channel_multipliers) m = static_cast<int>(p.u32());
  c.unet.input_channels = static_cast<int>(p.u32());
  c.unet.image_side = static_cast<int>(p.u32());
  c.unet.time_embed_dim = static_cast<int>(p.u32());
  c.head.num_classes = static_cast<int>(p.u32());
  c.head.hidden = static_cast<int>(p.u32());
  c.schedule.steps = static_cast<int>(p.u32());
  c.schedule.beta_start = p.f64();
  c.schedule.beta_end = p.f64();
  c.meta.step = p.u64();
  c.meta.seed = p.u64();
  const int nmet = p.count("metric count", 1u << 20);
  for (int i = 0; i < nmet; ++i) {
    std::string k = p.str();
    c.meta.metrics[k] = p.f64();
  }
  const int nt = p.count("tensor count", 1u << 20);
  c.tensors.reserve(static_cast<std::size_t>(nt));
  for (int i = 0; i < nt; ++i) {
    TensorRecord t;
    t.group = p.str();
    t.name = p.str();
    const int rank = p.count("tensor rank", 8);
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      const int dim = static_cast<int>(p.u32());
      if (dim <= 0) throw CheckpointError("checkpoint: tensor '" + t.name + "' has a non-positive dimension");
      t.shape.push_back(dim);
      n *= static_cast<std::size_t>(dim);
    }
    if (n * 4 > p.remaining())
      throw CheckpointError("checkpoint: tensor '" + t.name + "' shape " + shape_str(t.shape) +
                            " needs " + std::to_string(n * 4) + " bytes but only " +
                            std::to_string(p.remaining()) + " remain at byte " +
                            std::to_string(p.pos() + sizeof kMagic + 4));
    t.values.resize(n);
    for (auto& v : t.values) v = p.f32();
    c.tensors.push_back(std::move(t));
  }
  if (p.remaining() != 0)
    throw CheckpointError("checkpoint: " + std::to_string(p.remaining()) +
                          " trailing bytes after tensor table");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace jointdiff

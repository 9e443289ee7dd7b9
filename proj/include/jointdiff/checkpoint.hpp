#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointdiff/classifier_head.hpp"
#include "jointdiff/schedule.hpp"
#include "jointdiff/unet.hpp"

namespace jointdiff {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string group;
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const TensorRecord&) const = default;
};

struct TrainingMeta {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;

  bool operator==(const TrainingMeta&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  UNetConfig unet;
  HeadConfig head;
  ScheduleParams schedule;
  TrainingMeta meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

/// Binary layout, all integers and floats little-endian:
///
///   "JDIFCKPT" | u32 version
///   unet:     u32 depth, u32 base, u32 n, n x u32 multipliers, u32 input_channels,
///             u32 image_side, u32 time_embed_dim
///   head:     u32 num_classes, u32 hidden
///   schedule: u32 T, f64 beta_start, f64 beta_end
///   meta:     u64 step, u64 seed, u32 n, n x (str key, f64 value)
///   tensors:  u32 n, n x (str group, str name, u32 rank, rank x u32 dims, f32 values...)
///   u32 CRC-32 of every preceding byte
///
/// where str is u32 byte length followed by the bytes.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace jointdiff

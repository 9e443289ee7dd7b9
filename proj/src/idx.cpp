#include "jointdiff/idx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace jointdiff {

namespace {

struct IdxHeader {
  std::vector<std::uint32_t> dims;
  std::size_t payload_offset = 0;
};

IdxHeader parse_header(std::span<const std::uint8_t> b, const char* what) {
  const std::string w(what);
  if (b.size() < 4) throw ParseError(w + ": file shorter than the 4-byte IDX magic", b.size());
  if (b[0] != 0 || b[1] != 0) throw ParseError(w + ": bad IDX magic, leading bytes must be zero", 0);
  if (b[2] != 0x08)
    throw ParseError(w + ": unsupported IDX element type 0x" +
                         std::string(1, "0123456789abcdef"[b[2] >> 4]) +
                         std::string(1, "0123456789abcdef"[b[2] & 15]) + " (only 0x08 is supported)",
                     2);
  const int nd = b[3];
  if (nd < 1) throw ParseError(w + ": IDX dimension count must be >= 1", 3);
  IdxHeader h;
  h.payload_offset = 4 + 4 * static_cast<std::size_t>(nd);
  if (b.size() < h.payload_offset)
    throw ParseError(w + ": truncated header, expected " + std::to_string(h.payload_offset) +
                         " bytes, found " + std::to_string(b.size()),
                     b.size());
  for (int d = 0; d < nd; ++d) {
    const std::size_t o = 4 + 4 * static_cast<std::size_t>(d);
    const std::uint32_t v = (std::uint32_t{b[o]} << 24) | (std::uint32_t{b[o + 1]} << 16) |
                            (std::uint32_t{b[o + 2]} << 8) | std::uint32_t{b[o + 3]};
    if (v == 0) throw ParseError(w + ": zero-sized IDX dimension", o);
    h.dims.push_back(v);
  }
  std::size_t expected = 1;
  for (auto d : h.dims) expected *= d;
  const std::size_t actual = b.size() - h.payload_offset;
  if (actual != expected)
    throw ParseError(w + ": payload length mismatch, expected " + std::to_string(expected) +
                         " bytes, found " + std::to_string(actual),
                     h.payload_offset + std::min(actual, expected));
  return h;
}

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ParseError("cannot open " + p.string(), 0);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> image_bytes,
                  std::optional<std::span<const std::uint8_t>> label_bytes, int num_classes) {
  const IdxHeader h = parse_header(image_bytes, "images");
  Dataset d;
  if (h.dims.size() == 3) {
    d.channels = 1;
    d.height = static_cast<int>(h.dims[1]);
    d.width = static_cast<int>(h.dims[2]);
  } else if (h.dims.size() == 4) {
    d.channels = static_cast<int>(h.dims[1]);
    d.height = static_cast<int>(h.dims[2]);
    d.width = static_cast<int>(h.dims[3]);
  } else {
    throw ParseError("images: expected 3 or 4 IDX dimensions, got " + std::to_string(h.dims.size()), 3);
  }
  const auto payload = image_bytes.subspan(h.payload_offset);
  d.images.resize(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i)
    d.images[i] = static_cast<float>(payload[i]) / 127.5f - 1.0f;

  if (label_bytes) {
    const IdxHeader lh = parse_header(*label_bytes, "labels");
    if (lh.dims.size() != 1)
      throw ParseError("labels: expected 1 IDX dimension, got " + std::to_string(lh.dims.size()), 3);
    if (lh.dims[0] != h.dims[0])
      throw ParseError("label count " + std::to_string(lh.dims[0]) + " does not match image count " +
                           std::to_string(h.dims[0]),
                       4);
    const auto lp = label_bytes->subspan(lh.payload_offset);
    d.labels.assign(lp.begin(), lp.end());
    const int max_label = *std::max_element(d.labels.begin(), d.labels.end());
    d.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    if (max_label >= d.num_classes)
      throw ParseError("label " + std::to_string(max_label) + " outside [0, " +
                           std::to_string(d.num_classes) + ")",
                       lh.payload_offset);
  } else {
    d.num_classes = num_classes;
  }
  d.split = "idx";
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path, int num_classes) {
  const auto img = read_file(images_path);
  if (labels_path) {
    const auto lab = read_file(*labels_path);
    return parse_idx(img, std::span<const std::uint8_t>(lab), num_classes);
  }
  return parse_idx(img, std::nullopt, num_classes);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& data) {
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(data.channels == 1 ? 3 : 4)};
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  if (data.channels != 1) put_u32_be(out, static_cast<std::uint32_t>(data.channels));
  put_u32_be(out, static_cast<std::uint32_t>(data.height));
  put_u32_be(out, static_cast<std::uint32_t>(data.width));
  for (float v : data.images) {
    const float q = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
    out.push_back(static_cast<std::uint8_t>(q));
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& data) {
  if (!data.labeled()) throw ContractViolation("encode_idx_labels: dataset is unlabeled");
  std::vector<std::uint8_t> out{0, 0, 0x08, 1};
  put_u32_be(out, static_cast<std::uint32_t>(data.labels.size()));
  for (int y : data.labels) {
    if (y < 0 || y > 255) throw ContractViolation("encode_idx_labels: label does not fit a byte");
    out.push_back(static_cast<std::uint8_t>(y));
  }
  return out;
}

void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::optional<std::filesystem::path>& labels_path) {
  write_file(images_path, encode_idx_images(data));
  if (labels_path && data.labeled()) write_file(*labels_path, encode_idx_labels(data));
}

}  // namespace jointdiff

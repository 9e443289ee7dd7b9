#include "jointdiff/unet.hpp"

#include <cmath>
#include <string>

#include "jointdiff/ops.hpp"

namespace jointdiff {

void UNetConfig::validate() const {
  if (depth < 1) throw ContractViolation("unet: depth must be >= 1");
  if (base_channels < 1) throw ContractViolation("unet: base_channels must be >= 1");
  if (static_cast<int>(channel_multipliers.size()) != depth)
    throw ContractViolation("unet: need " + std::to_string(depth) + " channel multipliers, got " +
                            std::to_string(channel_multipliers.size()));
  for (int m : channel_multipliers)
    if (m < 1) throw ContractViolation("unet: channel multipliers must be positive");
  if (input_channels < 1) throw ContractViolation("unet: input_channels must be >= 1");
  if (image_side < 1 || image_side % (1 << (depth - 1)) != 0)
    throw ContractViolation("unet: image_side " + std::to_string(image_side) +
                            " not divisible by 2^(depth-1)");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw ContractViolation("unet: time_embed_dim must be even and >= 2");
}

std::vector<int> UNetConfig::level_channels() const {
  std::vector<int> out;
  out.reserve(channel_multipliers.size());
  for (int m : channel_multipliers) out.push_back(base_channels * m);
  return out;
}

int UNetConfig::pooled_length() const {
  int n = 0;
  for (int c : level_channels()) n += c;
  return n;
}

UNetConfig desk_unet_config() { return UNetConfig{}; }

UNetConfig full_size_config(FullSizeFormat format) {
  UNetConfig c;
  c.depth = 3;
  switch (format) {
    case FullSizeFormat::gray28:
      c.input_channels = 1;
      c.image_side = 28;
      c.base_channels = 64;
      c.channel_multipliers = {5, 8, 16};
      break;
    case FullSizeFormat::rgb32:
      c.input_channels = 3;
      c.image_side = 32;
      c.base_channels = 128;
      c.channel_multipliers = {5, 8, 16};
      break;
    case FullSizeFormat::rgb64:
      c.input_channels = 3;
      c.image_side = 64;
      c.base_channels = 128;
      c.channel_multipliers = {9, 16, 16};
      break;
  }
  c.time_embed_dim = 4 * c.base_channels;
  return c;
}

std::vector<float> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw ContractViolation("timestep_embedding: dim must be even, got " + std::to_string(dim));
  if (t < 0) throw ContractViolation("timestep_embedding: t must be >= 0");
  const int half = dim / 2;
  std::vector<float> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = t * freq;
    out[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(arg));
    out[static_cast<std::size_t>(half + i)] = static_cast<float>(std::cos(arg));
  }
  return out;
}

Tensor timestep_embedding(std::span<const int> timesteps, int dim) {
  if (timesteps.empty()) throw ContractViolation("timestep_embedding: empty batch");
  Tensor out(Shape{static_cast<int>(timesteps.size()), dim});
  auto ov = out.data();
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    auto row = timestep_embedding(timesteps[b], dim);
    std::copy(row.begin(), row.end(), ov.begin() + static_cast<std::ptrdiff_t>(b * dim));
  }
  return out;
}

Tensor pool(std::span<const Tensor> levels) {
  if (levels.empty()) throw ContractViolation("pool: no feature maps");
  std::vector<Tensor> pooled;
  pooled.reserve(levels.size());
  for (const auto& l : levels) pooled.push_back(ops::global_avg_pool(l));
  if (pooled.size() == 1) return pooled.front();
  return ops::concat_channels(pooled);
}

FeaturePyramid::FeaturePyramid(std::vector<Tensor> levels, Tensor time_context)
    : levels_(std::move(levels)), time_context_(std::move(time_context)) {
  pooled_ = pool(levels_);
}

FeaturePyramid FeaturePyramid::with_levels(std::vector<Tensor> levels) const {
  if (levels.size() != levels_.size())
    throw ContractViolation("pyramid: expected " + std::to_string(levels_.size()) + " levels");
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i].shape() != levels_[i].shape())
      throw ContractViolation("pyramid level " + std::to_string(i) + ": shape " +
                              shape_str(levels[i].shape()) + " does not match " +
                              shape_str(levels_[i].shape()));
  return FeaturePyramid(std::move(levels), time_context_);
}

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto widths = config_.level_channels();
  const int e = config_.time_embed_dim;
  nn::ParamRegistry enc(params_, "encoder", rng);
  time_fc1_ = nn::Linear(enc.scoped("time.fc1"), e, e);
  time_fc2_ = nn::Linear(enc.scoped("time.fc2"), e, e);
  conv_in_ = nn::Conv2d(enc.scoped("conv_in"), config_.input_channels, widths[0], 3);
  for (int i = 0; i < config_.depth; ++i) {
    auto lvl = enc.scoped("level" + std::to_string(i));
    EncoderLevel L;
    const int in = i == 0 ? widths[0] : widths[i - 1];
    if (i > 0) L.down.emplace(lvl.scoped("down"), in, in, 3, 2);
    L.blocks.emplace_back(lvl.scoped("block0"), in, widths[i], e);
    L.blocks.emplace_back(lvl.scoped("block1"), widths[i], widths[i], e);
    enc_.push_back(std::move(L));
  }

  nn::ParamRegistry dec(params_, "decoder", rng);
  dec_.resize(static_cast<std::size_t>(config_.depth));
  for (int i = config_.depth - 1; i >= 0; --i) {
    auto lvl = dec.scoped("level" + std::to_string(i));
    DecoderLevel& L = dec_[static_cast<std::size_t>(i)];
    if (i == config_.depth - 1) {
      L.blocks.emplace_back(lvl.scoped("block0"), widths[i], widths[i], e);
    } else {
      L.up.emplace(lvl.scoped("up"), widths[i + 1], widths[i], 3);
      L.blocks.emplace_back(lvl.scoped("block0"), 2 * widths[i], widths[i], e);
    }
    L.blocks.emplace_back(lvl.scoped("block1"), widths[i], widths[i], e);
  }
  out_norm_ = nn::GroupNorm(dec.scoped("out_norm"), widths[0]);
  conv_out_ = nn::Conv2d(dec.scoped("conv_out"), widths[0], config_.input_channels, 3);
}

FeaturePyramid UNet::encode(const Tensor& x_t, std::span<const int> timesteps) const {
  const Shape expect{x_t.defined() ? x_t.dim(0) : 0, config_.input_channels, config_.image_side,
                     config_.image_side};
  if (!x_t.defined() || x_t.shape() != expect)
    throw ContractViolation("encode: input shape " +
                            (x_t.defined() ? shape_str(x_t.shape()) : std::string("<undefined>")) +
                            " does not match config " + shape_str(expect));
  if (static_cast<int>(timesteps.size()) != x_t.dim(0))
    throw ContractViolation("encode: " + std::to_string(timesteps.size()) +
                            " timesteps for batch of " + std::to_string(x_t.dim(0)));
  Tensor temb = timestep_embedding(timesteps, config_.time_embed_dim);
  temb = time_fc2_(ops::silu(time_fc1_(temb)));

  std::vector<Tensor> levels;
  levels.reserve(enc_.size());
  Tensor h = conv_in_(x_t);
  for (const auto& L : enc_) {
    if (L.down) h = (*L.down)(h);
    for (const auto& b : L.blocks) h = b(h, temb);
    levels.push_back(h);
  }
  return FeaturePyramid(std::move(levels), temb);
}

FeaturePyramid UNet::encode(const Tensor& x_t, int t) const {
  std::vector<int> ts(static_cast<std::size_t>(x_t.dim(0)), t);
  return encode(x_t, ts);
}

Tensor UNet::decode(const FeaturePyramid& pyramid) const {
  if (static_cast<int>(pyramid.depth()) != config_.depth)
    throw ContractViolation("decode: pyramid depth " + std::to_string(pyramid.depth()) +
                            " does not match config depth " + std::to_string(config_.depth));
  const auto widths = config_.level_channels();
  for (int i = 0; i < config_.depth; ++i) {
    const Tensor& l = pyramid.level(static_cast<std::size_t>(i));
    if (l.rank() != 4 || l.dim(1) != widths[static_cast<std::size_t>(i)] ||
        l.dim(2) != config_.level_side(i))
      throw ContractViolation("decode: level " + std::to_string(i) + " shape " +
                              shape_str(l.shape()) + " does not match config");
  }
  const Tensor& temb = pyramid.time_context();
  Tensor h;
  for (int i = config_.depth - 1; i >= 0; --i) {
    const auto& L = dec_[static_cast<std::size_t>(i)];
    const Tensor& skip = pyramid.level(static_cast<std::size_t>(i));
    if (i == config_.depth - 1) {
      h = skip;
    } else {
      h = (*L.up)(ops::upsample_nearest2x(h));
      h = ops::concat_channels(h, skip);
    }
    for (const auto& b : L.blocks) h = b(h, temb);
  }
  return conv_out_(ops::silu(out_norm_(h)));
}

}  // namespace jointdiff

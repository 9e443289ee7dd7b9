#include <gtest/gtest.h>

#include <filesystem>

#include "jointdiff/checkpoint.hpp"
#include "jointdiff/config.hpp"
#include "jointdiff/eval_probes.hpp"
#include "jointdiff/idx.hpp"
#include "jointdiff/image_grid.hpp"
#include "jointdiff/model.hpp"
#include "jointdiff/shapes.hpp"
#include "test_util.hpp"

using namespace jointdiff;
using jointdiff::testing::random_tensor;
using jointdiff::testing::tiny_spec;

namespace {

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                     const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> b = {0, 0, 0x08, 3};
  for (std::uint32_t v : {n, h, w})
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  b.insert(b.end(), pixels.begin(), pixels.end());
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b = {0, 0, 0x08, 1};
  const auto n = static_cast<std::uint32_t>(labels.size());
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(n >> s));
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

template <class Fn>
std::string error_of(Fn fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Idx, EndpointPixelMapping) {
  const auto d = parse_idx(idx_images(1, 2, 2, {0, 255, 0, 255}));
  EXPECT_EQ(d.size(), 1);
  EXPECT_EQ(d.images, (std::vector<float>{-1, 1, -1, 1}));
  EXPECT_FALSE(d.labeled());
}

TEST(Idx, TruncationNamesExpectedAndFoundLengths) {
  auto b = idx_images(1, 2, 2, {0, 255, 0, 255});
  b.pop_back();
  const auto msg = error_of([&] { parse_idx(b); });
  EXPECT_NE(msg.find("expected 4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("found 3"), std::string::npos) << msg;
  EXPECT_THROW(parse_idx(b), ParseError);
}

TEST(Idx, BadMagicAndLabelCountMismatch) {
  auto b = idx_images(1, 2, 2, {0, 1, 2, 3});
  b[0] = 1;
  EXPECT_THROW(parse_idx(b), ParseError);
  const auto img = idx_images(2, 2, 2, std::vector<std::uint8_t>(8, 9));
  const auto lab = idx_labels({1, 0, 1});
  const auto msg = error_of([&] { parse_idx(img, std::span<const std::uint8_t>(lab), 2); });
  EXPECT_NE(msg.find("does not match"), std::string::npos) << msg;
}

TEST(Idx, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "jointdiff_idx_test";
  std::filesystem::create_directories(dir);
  const auto data = generate_synthetic_shapes(10, 8, 3, 1);
  save_idx(data, dir / "img.idx", dir / "lab.idx");
  const auto back = load_idx(dir / "img.idx", dir / "lab.idx", 3);
  EXPECT_EQ(back.labels, data.labels);
  ASSERT_EQ(back.images.size(), data.images.size());
  for (std::size_t i = 0; i < data.images.size(); ++i) EXPECT_NEAR(back.images[i], data.images[i], 1.0 / 255.0 + 1e-6);
  EXPECT_EQ(encode_idx_images(back), encode_idx_images(data));
  std::filesystem::remove_all(dir);
}

TEST(Shapes, DeterministicPerSeed) {
  const auto a = generate_synthetic_shapes(50, 16, 3, 7);
  const auto b = generate_synthetic_shapes(50, 16, 3, 7);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.attributes, b.attributes);
  EXPECT_NE(a.images, generate_synthetic_shapes(50, 16, 3, 8).images);
  EXPECT_NO_THROW(a.validate());
  for (float v : a.images) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Shapes, ClassHistogramBalanced) {
  for (int k : {2, 3}) {
    const auto d = generate_synthetic_shapes(10000, 8, k, 11);
    std::vector<int> count(k, 0);
    for (int y : d.labels) ++count[y];
    for (int c : count) EXPECT_NEAR(c / 10000.0, 1.0 / k, 0.02);
  }
  EXPECT_THROW(generate_synthetic_shapes(10, 8, 4, 1), ContractViolation);
  EXPECT_THROW(generate_synthetic_shapes(10, 6, 3, 1), ContractViolation);
}

TEST(Shapes, AttributeTable) {
  const auto d = generate_synthetic_shapes(2000, 16, 3, 12);
  ASSERT_EQ(d.num_attributes(), 3);
  const int disk = d.attribute_index("disk");
  const int dot = d.attribute_index("dot");
  int dots = 0;
  for (int i = 0; i < d.size(); ++i) {
    EXPECT_EQ(d.attribute(i, disk), d.labels[i] == 0);
    dots += d.attribute(i, dot);
  }
  EXPECT_NEAR(dots / 2000.0, 0.5, 0.05);
}

TEST(Shapes, PixelProbeFindsBackgroundIntensity) {
  const auto d = generate_synthetic_shapes(1000, 16, 3, 13);
  FeatureMatrix f(d.size(), static_cast<int>(d.image_size()));
  for (int i = 0; i < d.size(); ++i) {
    const auto img = d.image(i);
    for (std::size_t j = 0; j < img.size(); ++j) f(i, static_cast<Eigen::Index>(j)) = img[j];
  }
  const int a = d.attribute_index("bright_background");
  std::vector<int> y(static_cast<std::size_t>(d.size()));
  for (int i = 0; i < d.size(); ++i) y[i] = d.attribute(i, a);
  EXPECT_GT(fit_logistic_probe(f, y).auc, 0.95);
}

TEST(Shapes, StripedDomainDiffersFromFlat) {
  const auto flat = generate_synthetic_shapes(20, 16, 3, 4);
  const auto striped = generate_synthetic_shapes(20, 16, 3, 4, BackgroundStyle::striped);
  EXPECT_EQ(flat.labels, striped.labels);
  EXPECT_NE(flat.images, striped.images);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  JointModel m(tiny_spec(), 3);
  TrainingMeta meta;
  meta.step = 17;
  meta.seed = 5;
  meta.metrics["holdout_accuracy"] = 0.75;
  const auto ck = m.to_checkpoint(meta);
  const auto bytes = serialize_checkpoint(ck);
  const auto back = parse_checkpoint(bytes);
  EXPECT_EQ(back, ck);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  const auto m2 = JointModel::from_checkpoint(back);
  EXPECT_EQ(serialize_checkpoint(m2.to_checkpoint(meta)), bytes);

  const auto path = std::filesystem::temp_directory_path() / "jointdiff_ckpt_test.ckpt";
  save_checkpoint(ck, path);
  EXPECT_EQ(load_checkpoint(path), ck);
  std::filesystem::remove(path);
}

TEST(Checkpoint, FlippedByteFailsChecksum) {
  const auto bytes = serialize_checkpoint(JointModel(tiny_spec(), 3).to_checkpoint());
  auto bad = bytes;
  bad[bad.size() / 2] ^= 0x01;
  const auto msg = error_of([&] { parse_checkpoint(bad); });
  EXPECT_NE(msg.find("checksum"), std::string::npos) << msg;
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), CheckpointError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 9);
  EXPECT_THROW(parse_checkpoint(truncated), CheckpointError);
}

TEST(Checkpoint, MismatchedConfigNamesTheTensor) {
  const auto ck = JointModel(tiny_spec(), 3).to_checkpoint();
  auto other = tiny_spec();
  other.unet.base_channels = 8;
  JointModel m(other, 3);
  const auto msg = error_of([&] { m.load_parameters(ck); });
  EXPECT_NE(msg.find("encoder.conv_in.w"), std::string::npos) << msg;
  EXPECT_THROW(m.load_parameters(ck), CheckpointError);
}

TEST(ImageGrid, ByteMappingAndDimensions) {
  EXPECT_EQ(to_byte(-1.0f), 0);
  EXPECT_EQ(to_byte(1.0f), 255);
  EXPECT_EQ(to_byte(0.0f), 128);
  EXPECT_EQ(to_byte(-7.0f), 0);
  EXPECT_EQ(to_byte(3.0f), 255);
  const auto imgs = random_tensor({4, 1, 5, 6}, 1);
  const auto bytes = encode_image_grid(imgs, 2);
  const std::string header = "P5\n13 11\n255\n";
  ASSERT_GE(bytes.size(), header.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  EXPECT_EQ(bytes.size(), header.size() + 13 * 11);
  EXPECT_EQ(encode_image_grid(imgs, 2), bytes);
  // top-left pixel of tile 3 (row 1, column 1)
  EXPECT_EQ(bytes[header.size() + 6 * 13 + 7], to_byte(imgs[3 * 30]));
  // separator column
  EXPECT_EQ(bytes[header.size() + 6], 128);
  const auto rgb = encode_image_grid(random_tensor({3, 3, 2, 2}, 2), 3);
  EXPECT_EQ(std::string(rgb.begin(), rgb.begin() + 10), "P6\n8 2\n255");
}

TEST(Config, EmptyFileGivesDeskDefaults) {
  const auto c = parse_config("");
  const ConfigBundle d;
  EXPECT_EQ(c.model, d.model);
  EXPECT_EQ(c.model.unet.pooled_length(), 224);
  EXPECT_EQ(c.model.schedule.steps, 200);
  EXPECT_EQ(c.train.batch_size, 64);
  EXPECT_FLOAT_EQ(c.train.learning_rate, 2e-4f);
  EXPECT_EQ(c.model.head.hidden, 256);
}

TEST(Config, SectionsAndDottedKeys) {
  const auto c = parse_config(
      "# comment\n"
      "[schedule]\n"
      "T = 50\n"
      "\n"
      "[train]\n"
      "steps = 10   # trailing\n"
      "sampler.alpha = 2.5\n");
  EXPECT_EQ(c.model.schedule.steps, 50);
  EXPECT_EQ(c.train.total_steps, 10);
  EXPECT_FLOAT_EQ(c.sampler.alpha, 2.5f);
}

TEST(Config, ConstraintErrorsCarryLineNumbers) {
  try {
    parse_config("[train]\nsteps = 5\n[schedule]\nT = 0\n");
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  try {
    parse_config("sampler.alpha = -1\n");
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 1);
  }
  EXPECT_THROW(parse_config("no.such.key = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("train.steps\n"), ConfigError);
}

TEST(Config, OverridesUseSameValidation) {
  ConfigBundle c;
  apply_override(c, "train.lr=0.001");
  EXPECT_FLOAT_EQ(c.train.learning_rate, 1e-3f);
  EXPECT_THROW(apply_override(c, "train.lr=-1"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.lr"), ConfigError);
  const auto keys = config_keys();
  EXPECT_NE(std::find(keys.begin(), keys.end(), "schedule.T"), keys.end());
}

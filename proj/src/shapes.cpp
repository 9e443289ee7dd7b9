#include "jointdiff/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace jointdiff {

namespace {

constexpr int kSuper = 4;  // supersampling factor per axis

bool inside(int cls, double dx, double dy, double r) {
  switch (cls) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    default: {
      const double bar = 0.35 * r;
      return (std::abs(dx) <= bar && std::abs(dy) <= r) || (std::abs(dy) <= bar && std::abs(dx) <= r);
    }
  }
}

}  // namespace

Dataset generate_synthetic_shapes(int n, int image_side, int num_classes, std::uint64_t seed,
                                  BackgroundStyle background) {
  if (num_classes != 2 && num_classes != 3)
    throw ContractViolation("synthetic shapes: num_classes must be 2 or 3, got " +
                            std::to_string(num_classes));
  if (image_side < 8) throw ContractViolation("synthetic shapes: image_side must be >= 8");
  if (n < 1) throw ContractViolation("synthetic shapes: n must be >= 1");

  Dataset d;
  d.channels = 1;
  d.height = image_side;
  d.width = image_side;
  d.num_classes = num_classes;
  d.attribute_names = {"disk", "bright_background", "dot"};
  d.split = background == BackgroundStyle::flat ? "shapes-flat" : "shapes-striped";
  d.images.resize(static_cast<std::size_t>(n) * image_side * image_side);
  d.labels.resize(static_cast<std::size_t>(n));
  d.attributes.resize(static_cast<std::size_t>(n) * 3);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_class(0, num_classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side = image_side;

  for (int i = 0; i < n; ++i) {
    const int cls = pick_class(rng);
    const double bg = -0.9 + 0.8 * unit(rng);
    const double fg = std::min(1.0, bg + 0.8 + 0.3 * unit(rng));
    const double r = side * (0.2 + 0.12 * unit(rng));
    const double cx = r + 0.5 + (side - 2 * r - 1.0) * unit(rng);
    const double cy = r + 0.5 + (side - 2 * r - 1.0) * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const bool dot = unit(rng) < 0.5;
    // Dot position is drawn even when absent so every image consumes the same draws.
    int dot_x = 0, dot_y = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 32; ++attempt) {
      const int x = static_cast<int>(unit(rng) * (image_side - 1));
      const int y = static_cast<int>(unit(rng) * image_side);
      const bool clear = std::abs(x + 1.0 - cx) > r + 1.5 || std::abs(y + 0.5 - cy) > r + 1.0;
      if (!placed && clear) {
        dot_x = x;
        dot_y = y;
        placed = true;
      }
    }
    if (!placed) {
      dot_x = cx < side / 2 ? image_side - 2 : 0;
      dot_y = cy < side / 2 ? image_side - 1 : 0;
    }

    float* img = d.images.data() + static_cast<std::size_t>(i) * image_side * image_side;
    for (int y = 0; y < image_side; ++y) {
      for (int x = 0; x < image_side; ++x) {
        double base = bg;
        if (background == BackgroundStyle::striped)
          base += 0.6 * std::sin(2.0 * std::numbers::pi * x / 8.0 + phase);
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x + (sx + 0.5) / kSuper;
            const double py = y + (sy + 0.5) / kSuper;
            hits += inside(cls, px - cx, py - cy, r) ? 1 : 0;
          }
        const double cover = static_cast<double>(hits) / (kSuper * kSuper);
        double v = base + cover * (fg - base);
        if (dot && y == dot_y && (x == dot_x || x == dot_x + 1)) v = fg;
        img[y * image_side + x] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
    d.labels[static_cast<std::size_t>(i)] = cls;
    d.attributes[static_cast<std::size_t>(i) * 3 + 0] = cls == 0 ? 1 : 0;
    d.attributes[static_cast<std::size_t>(i) * 3 + 1] = bg > kBackgroundMedian ? 1 : 0;
    d.attributes[static_cast<std::size_t>(i) * 3 + 2] = dot ? 1 : 0;
  }
  return d;
}

}  // namespace jointdiff

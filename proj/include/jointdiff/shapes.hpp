#pragma once

#include <cstdint>

#include "jointdiff/dataset.hpp"

namespace jointdiff {

/// Background family.  `flat` is a uniform intensity; `striped` overlays
/// vertical stripes of period 8, giving a second domain with a disjoint texture
/// distribution.
enum class BackgroundStyle { flat, striped };

/// Class index -> shape: 0 disk, 1 square, 2 cross.
inline constexpr const char* kShapeNames[3] = {"disk", "square", "cross"};

/// Lower edge of the bright-background attribute: background levels are drawn
/// uniformly from [-0.9, -0.1], so this is the distribution median.
inline constexpr float kBackgroundMedian = -0.5f;

/// Renders anti-aliased shapes at random position and scale on a random
/// background level, with an independent 2-pixel dot (p = 0.5) placed away
/// from the shape.  Attributes: "disk" (class 0), "bright_background"
/// (level above the median), "dot".  Deterministic in `seed`.
Dataset generate_synthetic_shapes(int n, int image_side, int num_classes, std::uint64_t seed,
                                  BackgroundStyle background = BackgroundStyle::flat);

}  // namespace jointdiff

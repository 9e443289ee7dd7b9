#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "jointdiff/model.hpp"
#include "jointdiff/sampler.hpp"
#include "jointdiff/trainer.hpp"

namespace jointdiff {

/// Unknown key, malformed value or violated constraint.  line() is the
/// 1-based line in the config text, or 0 for command-line overrides and
/// whole-bundle checks.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct DataConfig {
  /// "shapes" (generated) or "idx" (files below).
  std::string source = "shapes";
  int train_size = 3000;
  int test_size = 600;
  std::uint64_t seed = 1;
  /// "flat" or "striped" (shapes only).
  std::string background = "flat";
  std::string train_images, train_labels, test_images, test_labels;
};

struct EvalConfig {
  std::uint64_t noise_seed = 99;
  int samples = 64;
  int knn = 3;
  int probe_max_iterations = 5000;
};

/// Everything a CLI run needs.  Defaults are the desk preset.
struct ConfigBundle {
  ModelSpec model;
  TrainConfig train;
  SamplerConfig sampler;
  DataConfig data;
  EvalConfig eval;

  ConfigBundle();
  /// Whole-bundle checks (cross-field constraints); throws ConfigError with line 0.
  void validate() const;
};

/// Parses `key = value` lines.  `[section]` headers prefix later keys with
/// "section."; dotted keys may also be written in full.  '#' starts a comment.
ConfigBundle parse_config(std::string_view text);
ConfigBundle load_config(const std::filesystem::path& path);

/// Applies one "key=value" override with the same validation as the file format.
void apply_override(ConfigBundle& bundle, std::string_view assignment);

/// Every accepted key, in documentation order.
std::vector<std::string> config_keys();

}  // namespace jointdiff

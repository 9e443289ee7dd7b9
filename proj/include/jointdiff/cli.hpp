#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "jointdiff/config.hpp"
#include "jointdiff/dataset.hpp"

namespace jointdiff {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Train and test splits described by `data` for images of the model's shape.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& data, const ModelSpec& spec);

/// Parses `args` (without the program name) and runs one subcommand.
/// Machine-readable results go to `out`, progress and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jointdiff

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "panofocus/focuser.hpp"
#include "panofocus/model.hpp"

namespace panofocus {

// Run-wide configuration: focuser thresholds, encoder dimensions, loss
// weights, seeds and pipeline knobs. Defaults match the reference setting
// (theta 48, beta 1.5/1.8, lambda 1e-3, lambda_reg 5).
struct RunConfig {
  FocuserConfig focuser;
  ModelDims dims;
  FrameSpec frame;  // 3760 x 480 by default
  double lambda = 1e-3;
  double lambda_reg = 5.0;
  std::uint64_t weights_seed = 7;
  std::uint64_t gumbel_seed = 11;
  double grouping_threshold = 100.0;  // px between box centers
  int patch_size = 16;
  double pred_threshold = 0.5;  // sigmoid cutoff for multi-label decisions
  double eval_iou = 0.3;
  int jobs = 0;  // 0 = hardware concurrency

  void validate() const;
};

// Parses a "key = value" file ('#' starts a comment). Unknown keys and
// out-of-range values are rejected. Absent path -> pure defaults.
RunConfig load_config(const std::optional<std::filesystem::path>& path);

// Applies one "key=value" override, same validation as the file parser.
// Overrides always win over file values.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Convenience: load_config then apply each "key=value" string in order.
RunConfig load_config_with_overrides(const std::optional<std::filesystem::path>& path,
                                     const std::vector<std::string>& overrides);

// All recognized configuration keys, for --help output.
std::vector<std::string> config_keys();

}  // namespace panofocus

#pragma once

#include <optional>
#include <string>
#include <vector>

namespace panofocus::cli {

// Options shared by every subcommand: config file (PANOFOCUS_CONFIG is the
// fallback when --config is absent) plus repeatable --set key=value
// overrides, which always win over file values.
struct CommonOpts {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
};

struct FocusOpts {
  CommonOpts common;
  std::string detections;
  std::string detector;
  std::string out;
  std::optional<std::string> images_dir;
  bool skip_region_errors = false;
};

struct ForwardOpts {
  CommonOpts common;
  std::optional<std::string> annotations;
  std::optional<std::string> detections;
  std::string weights = "";  // "file:PATH" | "seed:N" | "" = seed from config
  std::optional<std::string> images_dir;
  std::string out_features;
  std::string out_predictions;
  bool train_mode = false;
};

struct GradCheckOpts {
  CommonOpts common;
  std::uint64_t seed = 7;
  int d = 8;
  int heads = 4;
  int prototypes = 4;
  int m_max = 8;
  int individuals = 3;
  int groups = 2;
  int patch_tokens = 4;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  double init_std = 0.3;  // checkpoint scale; keeps activations O(1) so differences stay conditioned
  std::optional<std::string> weights;
};

struct EvalOpts {
  CommonOpts common;
  std::string predictions;
  std::string ground_truth;
  std::optional<double> iou;
  std::optional<std::string> json_out;
};

struct RenderOpts {
  CommonOpts common;
  std::optional<std::string> detections;
  std::optional<std::string> fused;
  std::optional<std::string> predictions;
  std::optional<std::string> images_dir;
  std::string out_dir;
};

struct PipelineOpts {
  CommonOpts common;
  std::string detections;
  std::string detector;
  std::string ground_truth;
  std::string out_dir;
  std::optional<std::string> images_dir;
  bool skip_region_errors = false;
  bool dry_run = false;
};

int cmd_focus(const FocusOpts& opts);
int cmd_forward(const ForwardOpts& opts);
int cmd_gradcheck(const GradCheckOpts& opts);
int cmd_eval(const EvalOpts& opts);
int cmd_render(const RenderOpts& opts);
int cmd_pipeline(const PipelineOpts& opts);

}  // namespace panofocus::cli

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "panofocus/config.hpp"
#include "panofocus/evaluation.hpp"
#include "panofocus/featurizer.hpp"
#include "panofocus/image.hpp"
#include "panofocus/prototyper.hpp"

namespace panofocus {

// One frame heading into the recognition branch: detected (or annotated)
// individual boxes, optional ground-truth group memberships (member indices),
// and the frame pixels for patch embedding.
struct ForwardFrameInput {
  std::string frame_id;
  std::vector<Box> boxes;
  std::optional<std::vector<std::vector<int>>> gt_groups;
  const Image* image = nullptr;
};

struct ForwardFrameResult {
  FramePrediction prediction;
  std::optional<BppFeatures> features;  // absent for frames with no individuals
  std::vector<GroupProposal> groups;
};

// Embeds each individual crop, forms groups (ground-truth memberships when
// supplied, center clustering otherwise), runs the bidirectional encoder and
// thresholds the recognition heads into a FramePrediction. Frames with no
// individuals take a guard path that predicts global labels from a zero
// feature. train_mode enables seeded attention noise (one stream per frame,
// derived from the frame id).
ForwardFrameResult run_forward_frame(const RunConfig& cfg, const ModelWeights& weights,
                                     const ForwardFrameInput& input, bool train_mode = false);

// features.jsonl row: {"frame_id", "f_ind", "f_gro", "f_glo"}.
std::string features_line(const std::string& frame_id, const ForwardFrameResult& result);

// Runs fn(0..n-1) on up to `jobs` worker threads (jobs <= 0 uses the hardware
// count). The first exception thrown by any worker is rethrown after all
// workers have stopped.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace panofocus

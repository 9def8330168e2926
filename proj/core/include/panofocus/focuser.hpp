#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "panofocus/geometry.hpp"
#include "panofocus/image.hpp"

namespace panofocus {

struct FocuserConfig {
  double theta = 48.0;  // width threshold switching between the two ratios
  double beta1 = 1.5;   // expansion for wide boxes (w >= theta)
  double beta2 = 1.8;   // expansion for narrow boxes
  double nms_iou = 0.5;
  int min_merge_count = 1;      // re-detect regions that merged at least this many boxes
  double min_region_size = 8.0; // skip regions narrower/shorter than this
};

void validate_config(const FocuserConfig& cfg);

// One dense sub-region: the grown seed box plus which extended detections it
// absorbed (indices into the extended list handed to dense_region_merge).
struct SubRegion {
  Box bounds;
  int merged_count = 0;
  std::vector<std::size_t> source_indices;
};

// Everything a detector adapter may need to re-detect one sub-region.
struct RegionQuery {
  std::string frame_id;
  std::size_t region_index = 0;
  CropWindow crop;              // integer window in frame coordinates
  const Image* image = nullptr; // full frame pixels, when the caller has them
};

// Pluggable second-pass detector. Implementations return boxes in crop-local
// coordinates (within [0,crop.w]x[0,crop.h]) and throw on failure.
class DetectorAdapter {
 public:
  virtual ~DetectorAdapter() = default;
  virtual std::vector<Box> detect(const RegionQuery& query) = 0;
  // True when detect() may be called concurrently from several threads.
  virtual bool concurrent_safe() const { return false; }
};

// Identity of a frame being focused. The image pointer may be null when the
// adapter does not need pixels (e.g. the file-backed fixture adapter).
struct FrameContext {
  std::string frame_id;
  FrameSpec frame;
  const Image* image = nullptr;
};

// Width-thresholded expansion about the box center, then clipped to the
// frame. Score is preserved.
Box adaptive_resize(const Box& b, const FocuserConfig& cfg, const FrameSpec& frame);

// Greedy growth: repeatedly seed with the minimal-area remaining box and
// absorb overlapping boxes (union) until the seed is disjoint from the rest.
// Ties on area break lexicographically by (x, y, w, h).
std::vector<SubRegion> dense_region_merge(const std::vector<Box>& extended);

struct RefineResult {
  std::vector<Box> boxes;  // fine detections remapped to frame coordinates
  std::vector<std::string> warnings;
};

// Runs the adapter over qualifying sub-regions and remaps crop-local results
// into frame coordinates. Adapter failures throw AdapterError unless
// skip_region_errors is set, in which case they become warnings.
RefineResult refine_regions(const std::vector<SubRegion>& regions, DetectorAdapter& detector,
                            const FrameContext& ctx, const FocuserConfig& cfg,
                            bool skip_region_errors = false);

// Class-agnostic greedy NMS over original+fine. Every box must carry a score.
// Score ties prefer original-pass boxes, then lexicographic (x, y) order.
std::vector<Box> fuse_detections(const std::vector<Box>& original, const std::vector<Box>& fine,
                                 const FocuserConfig& cfg);

struct FocusStats {
  std::size_t original = 0;
  std::size_t extended = 0;
  std::size_t regions = 0;
  std::size_t fine = 0;
  std::size_t fused = 0;
};

struct FocusResult {
  std::vector<Box> boxes;  // size-adapting detections for the frame
  FocusStats stats;
  std::vector<std::string> warnings;
};

// Full per-frame pipeline: resize -> merge -> re-detect -> fuse.
FocusResult run_focuser(const FrameContext& ctx, const std::vector<Box>& original,
                        DetectorAdapter& detector, const FocuserConfig& cfg,
                        bool skip_region_errors = false);

}  // namespace panofocus

#include "panofocus/focuser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panofocus/errors.hpp"

namespace panofocus {

void validate_config(const FocuserConfig& cfg) {
  if (!(cfg.theta > 0.0)) throw ValidationError("config field 'theta' must be > 0");
  if (!(cfg.beta1 >= 1.0)) throw ValidationError("config field 'beta1' must be >= 1");
  if (!(cfg.beta2 >= 1.0)) throw ValidationError("config field 'beta2' must be >= 1");
  if (!(cfg.nms_iou > 0.0) || !(cfg.nms_iou < 1.0))
    throw ValidationError("config field 'nms_iou' must lie in (0,1)");
  if (cfg.min_merge_count < 1) throw ValidationError("config field 'min_merge_count' must be >= 1");
  if (!(cfg.min_region_size >= 0.0))
    throw ValidationError("config field 'min_region_size' must be >= 0");
}

Box adaptive_resize(const Box& b, const FocuserConfig& cfg, const FrameSpec& frame) {
  const double beta = (b.w >= cfg.theta) ? cfg.beta1 : cfg.beta2;
  const auto [cx, cy] = b.center();
  const double nw = b.w * beta;
  const double nh = b.h * beta;
  Box expanded{cx - 0.5 * nw, cy - 0.5 * nh, nw, nh, b.score};
  // clipping is a strict no-op for interior boxes
  if (expanded.x >= 0.0 && expanded.y >= 0.0 && expanded.right() <= frame.width &&
      expanded.bottom() <= frame.height)
    return expanded;
  return clip_box(expanded, frame);
}

namespace {

// Total order on boxes by area, then lexicographic coordinates; makes the
// merge result independent of input permutation.
bool area_lex_less(const Box& a, const Box& b) {
  if (a.area() != b.area()) return a.area() < b.area();
  return lex_less(a, b);
}

}  // namespace

std::vector<SubRegion> dense_region_merge(const std::vector<Box>& extended) {
  struct Entry {
    Box box;
    std::size_t index;
  };
  std::vector<Entry> remaining;
  remaining.reserve(extended.size());
  for (std::size_t i = 0; i < extended.size(); ++i) remaining.push_back({extended[i], i});
  std::stable_sort(remaining.begin(), remaining.end(),
                   [](const Entry& a, const Entry& b) { return area_lex_less(a.box, b.box); });

  std::vector<SubRegion> out;
  while (!remaining.empty()) {
    SubRegion region;
    region.bounds = remaining.front().box;
    region.source_indices.push_back(remaining.front().index);
    remaining.erase(remaining.begin());

    // Grow the seed until nothing left overlaps it. Rescan from the start
    // after every merge since the grown bounds may now touch earlier boxes.
    bool merged = true;
    while (merged) {
      merged = false;
      for (auto it = remaining.begin(); it != remaining.end(); ++it) {
        if (overlaps(region.bounds, it->box)) {
          region.bounds = union_box(region.bounds, it->box);
          region.source_indices.push_back(it->index);
          remaining.erase(it);
          merged = true;
          break;
        }
      }
    }
    region.merged_count = static_cast<int>(region.source_indices.size());
    out.push_back(std::move(region));
  }
  return out;
}

RefineResult refine_regions(const std::vector<SubRegion>& regions, DetectorAdapter& detector,
                            const FrameContext& ctx, const FocuserConfig& cfg,
                            bool skip_region_errors) {
  RefineResult result;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const SubRegion& region = regions[i];
    if (region.merged_count < cfg.min_merge_count) continue;
    if (region.bounds.w < cfg.min_region_size || region.bounds.h < cfg.min_region_size) continue;

    RegionQuery query;
    query.frame_id = ctx.frame_id;
    query.region_index = i;
    query.crop = integer_crop_bounds(region.bounds, ctx.frame);
    query.image = ctx.image;

    std::vector<Box> local;
    try {
      local = detector.detect(query);
      for (const Box& b : local) {
        validate_box(b);
        if (b.x < 0.0 || b.y < 0.0 || b.right() > query.crop.w || b.bottom() > query.crop.h)
          throw ValidationError("adapter returned a box outside the region extent");
      }
    } catch (const AdapterError&) {
      if (!skip_region_errors) throw;
      result.warnings.push_back("skipped frame '" + ctx.frame_id + "' region " +
                                std::to_string(i));
      continue;
    } catch (const Error& e) {
      if (!skip_region_errors) throw AdapterError(ctx.frame_id, i, e.what());
      result.warnings.push_back("skipped frame '" + ctx.frame_id + "' region " +
                                std::to_string(i) + ": " + e.what());
      continue;
    }
    for (Box b : local) {
      b.x += query.crop.x;
      b.y += query.crop.y;
      result.boxes.push_back(b);
    }
  }
  return result;
}

std::vector<Box> fuse_detections(const std::vector<Box>& original, const std::vector<Box>& fine,
                                 const FocuserConfig& cfg) {
  struct Candidate {
    Box box;
    int pass;  // 0 = original, 1 = fine; original wins score ties
  };
  std::vector<Candidate> all;
  all.reserve(original.size() + fine.size());
  for (const Box& b : original) all.push_back({b, 0});
  for (const Box& b : fine) all.push_back({b, 1});
  for (const Candidate& c : all)
    if (!c.box.score) throw ValidationError("fusion requires a score on every box");

  std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (*a.box.score != *b.box.score) return *a.box.score > *b.box.score;
    if (a.pass != b.pass) return a.pass < b.pass;
    return lex_less(a.box, b.box);
  });

  std::vector<Box> kept;
  for (const Candidate& c : all) {
    bool suppressed = false;
    for (const Box& k : kept) {
      if (iou(c.box, k) > cfg.nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(c.box);
  }
  return kept;
}

FocusResult run_focuser(const FrameContext& ctx, const std::vector<Box>& original,
                        DetectorAdapter& detector, const FocuserConfig& cfg,
                        bool skip_region_errors) {
  validate_config(cfg);
  FocusResult result;
  result.stats.original = original.size();

  std::vector<Box> extended;
  extended.reserve(original.size());
  for (const Box& b : original) extended.push_back(adaptive_resize(b, cfg, ctx.frame));
  result.stats.extended = extended.size();

  const std::vector<SubRegion> regions = dense_region_merge(extended);
  result.stats.regions = regions.size();

  RefineResult refined = refine_regions(regions, detector, ctx, cfg, skip_region_errors);
  result.stats.fine = refined.boxes.size();
  result.warnings = std::move(refined.warnings);

  result.boxes = fuse_detections(original, refined.boxes, cfg);
  result.stats.fused = result.boxes.size();
  return result;
}

}  // namespace panofocus

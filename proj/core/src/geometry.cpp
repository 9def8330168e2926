#include "panofocus/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "panofocus/errors.hpp"

namespace panofocus {

bool is_valid_box(const Box& b) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) return false;
  if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) || !std::isfinite(b.h))
    return false;
  if (b.score && (!std::isfinite(*b.score) || *b.score < 0.0 || *b.score > 1.0)) return false;
  return true;
}

void validate_box(const Box& b) {
  if (!std::isfinite(b.x) || !std::isfinite(b.y))
    throw ValidationError("box position must be finite");
  if (!std::isfinite(b.w) || !(b.w > 0.0))
    throw ValidationError("box field 'w' must be finite and > 0");
  if (!std::isfinite(b.h) || !(b.h > 0.0))
    throw ValidationError("box field 'h' must be finite and > 0");
  if (b.score && (!std::isfinite(*b.score) || *b.score < 0.0 || *b.score > 1.0))
    throw ValidationError("box field 'score' must lie in [0,1]");
}

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

namespace {

// Width such that origin + width lands at or beyond the far edge; x1 - x0 can
// round one ulp short, which would break exact containment of the inputs.
double span_at_least(double x0, double x1) {
  double w = x1 - x0;
  while (x0 + w < x1) w = std::nextafter(w, std::numeric_limits<double>::infinity());
  return w;
}

// Width such that origin + width stays at or inside the far edge.
double span_at_most(double x0, double x1) {
  double w = x1 - x0;
  while (x0 + w > x1) w = std::nextafter(w, 0.0);
  return w;
}

}  // namespace

Box union_box(const Box& a, const Box& b) {
  const double x0 = std::min(a.x, b.x);
  const double y0 = std::min(a.y, b.y);
  const double x1 = std::max(a.right(), b.right());
  const double y1 = std::max(a.bottom(), b.bottom());
  return Box{x0, y0, span_at_least(x0, x1), span_at_least(y0, y1), std::nullopt};
}

bool overlaps(const Box& a, const Box& b) { return intersection_area(a, b) > 0.0; }

bool contains(const Box& outer, const Box& inner) {
  return inner.x >= outer.x && inner.y >= outer.y && inner.right() <= outer.right() &&
         inner.bottom() <= outer.bottom();
}

Box clip_box(const Box& b, const FrameSpec& frame) {
  const double x0 = std::max(b.x, 0.0);
  const double y0 = std::max(b.y, 0.0);
  const double x1 = std::min(b.right(), frame.width);
  const double y1 = std::min(b.bottom(), frame.height);
  if (x1 - x0 <= 0.0 || y1 - y0 <= 0.0)
    throw ValidationError("box lies entirely outside the frame");
  return Box{x0, y0, span_at_most(x0, x1), span_at_most(y0, y1), b.score};
}

bool lex_less(const Box& a, const Box& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  if (a.w != b.w) return a.w < b.w;
  return a.h < b.h;
}

}  // namespace panofocus

#pragma once

#include <optional>
#include <utility>

namespace panofocus {

// Axis-aligned box in continuous pixel coordinates, (left, top, width, height).
// Coordinates stay fractional through the whole pipeline; rounding to integer
// pixels happens only when a region is actually cropped from an image.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  std::optional<double> score;

  double left() const { return x; }
  double top() const { return y; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double area() const { return w * h; }
  std::pair<double, double> center() const { return {x + 0.5 * w, y + 0.5 * h}; }

  bool operator==(const Box& o) const {
    return x == o.x && y == o.y && w == o.w && h == o.h && score == o.score;
  }
};

struct FrameSpec {
  double width = 3760.0;
  double height = 480.0;
};

// True iff w > 0, h > 0, all coordinates finite and score (if any) in [0,1].
bool is_valid_box(const Box& b);

// Throws ValidationError describing the offending field.
void validate_box(const Box& b);

double intersection_area(const Box& a, const Box& b);

// Intersection over union; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

// Smallest axis-aligned box enclosing both. The result carries no score.
Box union_box(const Box& a, const Box& b);

// Strictly positive intersection area. Edge-touching boxes do not overlap.
bool overlaps(const Box& a, const Box& b);

// True iff inner lies entirely within outer (boundaries may coincide).
bool contains(const Box& outer, const Box& inner);

// Box intersected with [0,width]x[0,height]. Throws ValidationError when the
// box does not intersect the frame.
Box clip_box(const Box& b, const FrameSpec& frame);

// Lexicographic (x, y, w, h) order used for deterministic tie-breaking.
bool lex_less(const Box& a, const Box& b);

}  // namespace panofocus

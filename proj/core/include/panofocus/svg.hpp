#pragma once

#include <string>
#include <vector>

#include "panofocus/geometry.hpp"

namespace panofocus {

struct SvgLayer {
  std::vector<Box> boxes;
  std::string stroke = "#808080";
  double stroke_width = 2.0;
  std::string dash;  // e.g. "6,3"; empty = solid
};

// One frame as a standalone SVG: an optional <image> backdrop plus one <rect>
// per box. Boxes reaching past the frame are clipped by the SVG viewport.
std::string render_svg(double width, double height, const std::string& image_href,
                       const std::vector<SvgLayer>& layers);

}  // namespace panofocus

#include "panofocus/svg.hpp"

#include <sstream>

namespace panofocus {

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(double width, double height, const std::string& image_href,
                       const std::vector<SvgLayer>& layers) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" "
     << "xmlns:xlink=\"http://www.w3.org/1999/xlink\" "
     << "width=\"" << width << "\" height=\"" << height << "\" "
     << "viewBox=\"0 0 " << width << " " << height << "\">\n";
  if (!image_href.empty())
    os << "  <image xlink:href=\"" << xml_escape(image_href) << "\" x=\"0\" y=\"0\" width=\""
       << width << "\" height=\"" << height << "\"/>\n";
  for (const SvgLayer& layer : layers) {
    for (const Box& b : layer.boxes) {
      os << "  <rect x=\"" << b.x << "\" y=\"" << b.y << "\" width=\"" << b.w << "\" height=\""
         << b.h << "\" fill=\"none\" stroke=\"" << xml_escape(layer.stroke)
         << "\" stroke-width=\"" << layer.stroke_width << "\"";
      if (!layer.dash.empty()) os << " stroke-dasharray=\"" << xml_escape(layer.dash) << "\"";
      os << "/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace panofocus

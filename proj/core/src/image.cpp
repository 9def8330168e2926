#include "panofocus/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "panofocus/errors.hpp"

namespace panofocus {

CropWindow integer_crop_bounds(const Box& b, const FrameSpec& frame) {
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y)));
  const int x1 = std::min(static_cast<int>(frame.width), static_cast<int>(std::ceil(b.right())));
  const int y1 = std::min(static_cast<int>(frame.height), static_cast<int>(std::ceil(b.bottom())));
  if (x1 <= x0 || y1 <= y0) throw ValidationError("crop window is empty after clamping to frame");
  return CropWindow{x0, y0, x1 - x0, y1 - y0};
}

Image make_image(int width, int height, int channels, std::uint8_t fill) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(width) * height * channels, fill);
  return img;
}

namespace {

Image from_mat(const cv::Mat& m) {
  Image img;
  img.width = m.cols;
  img.height = m.rows;
  img.channels = m.channels();
  img.pixels.resize(static_cast<std::size_t>(m.cols) * m.rows * m.channels());
  if (m.isContinuous()) {
    std::memcpy(img.pixels.data(), m.data, img.pixels.size());
  } else {
    for (int r = 0; r < m.rows; ++r)
      std::memcpy(img.pixels.data() + static_cast<std::size_t>(r) * m.cols * m.channels(),
                  m.ptr(r), static_cast<std::size_t>(m.cols) * m.channels());
  }
  return img;
}

cv::Mat to_mat(const Image& img) {
  const int type = img.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat m(img.height, img.width, type);
  for (int r = 0; r < img.height; ++r)
    std::memcpy(m.ptr(r), img.pixels.data() + static_cast<std::size_t>(r) * img.width * img.channels,
                static_cast<std::size_t>(img.width) * img.channels);
  return m;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ValidationError("cannot read image '" + path.string() + "'");
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  if (m.depth() != CV_8U) m.convertTo(m, CV_8U);
  return from_mat(m);
}

void save_png(const std::filesystem::path& path, const Image& img) {
  if (img.empty()) throw ValidationError("refusing to write an empty image");
  cv::Mat m = to_mat(img);
  if (img.channels == 3) cv::cvtColor(m, m, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), m))
    throw ValidationError("cannot write image '" + path.string() + "'");
}

Image crop_image(const Image& img, const CropWindow& win) {
  if (win.x < 0 || win.y < 0 || win.w <= 0 || win.h <= 0 || win.x + win.w > img.width ||
      win.y + win.h > img.height)
    throw ValidationError("crop window exceeds image bounds");
  Image out = make_image(win.w, win.h, img.channels);
  for (int y = 0; y < win.h; ++y)
    std::memcpy(&out.at(0, y, 0), &img.pixels[static_cast<std::size_t>(
                                      ((win.y + y) * img.width + win.x) * img.channels)],
                static_cast<std::size_t>(win.w) * img.channels);
  return out;
}

Image resize_image(const Image& img, int new_width, int new_height) {
  if (img.empty()) throw ValidationError("cannot resize an empty image");
  if (new_width == img.width && new_height == img.height) return img;
  cv::Mat m = to_mat(img);
  cv::Mat resized;
  cv::resize(m, resized, cv::Size(new_width, new_height), 0, 0, cv::INTER_LINEAR);
  return from_mat(resized);
}

}  // namespace panofocus

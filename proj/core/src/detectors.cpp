#include "panofocus/detectors.hpp"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "panofocus/errors.hpp"
#include "panofocus/image.hpp"

namespace panofocus {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ValidationError(where + ": unknown field '" + key + "'");
  }
}

double require_finite_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ValidationError(where + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(where + " must be finite");
  return d;
}

Box parse_detection_box(const json& jb, const std::string& where) {
  if (!jb.is_object()) throw ValidationError(where + " must be an object");
  reject_unknown_keys(jb, {"x", "y", "w", "h", "score"}, where);
  for (const char* key : {"x", "y", "w", "h"})
    if (!jb.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  Box b;
  b.x = require_finite_number(jb["x"], where + ".x");
  b.y = require_finite_number(jb["y"], where + ".y");
  b.w = require_finite_number(jb["w"], where + ".w");
  b.h = require_finite_number(jb["h"], where + ".h");
  if (jb.contains("score")) b.score = require_finite_number(jb["score"], where + ".score");
  validate_box(b);
  return b;
}

}  // namespace

FileDetector::FileDetector(const std::filesystem::path& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw ValidationError("cannot open detector file '" + jsonl_path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(jsonl_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string where = jsonl_path.string() + ":" + std::to_string(line_no);
    reject_unknown_keys(obj, {"frame_id", "region", "boxes"}, where);
    if (!obj.contains("frame_id") || !obj["frame_id"].is_string())
      throw ValidationError(where + ": missing string field 'frame_id'");
    if (!obj.contains("region") || !obj["region"].is_number_unsigned())
      throw ValidationError(where + ": missing non-negative integer field 'region'");
    if (!obj.contains("boxes") || !obj["boxes"].is_array())
      throw ValidationError(where + ": missing array field 'boxes'");
    std::vector<Box> boxes;
    for (const auto& jb : obj["boxes"]) boxes.push_back(parse_detection_box(jb, where + ".boxes"));
    const auto key = std::make_pair(obj["frame_id"].get<std::string>(),
                                    obj["region"].get<std::size_t>());
    if (!responses_.emplace(key, std::move(boxes)).second)
      throw ValidationError(where + ": duplicate (frame_id, region) entry");
  }
}

std::vector<Box> FileDetector::detect(const RegionQuery& query) {
  const auto it = responses_.find({query.frame_id, query.region_index});
  if (it == responses_.end()) return {};
  return it->second;
}

CommandDetector::CommandDetector(std::string command, std::filesystem::path temp_dir)
    : command_(std::move(command)), temp_dir_(std::move(temp_dir)) {
  if (command_.empty()) throw ValidationError("detector command must not be empty");
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += "'";
  return out;
}

std::atomic<std::uint64_t> g_crop_counter{0};

}  // namespace

std::vector<Box> CommandDetector::detect(const RegionQuery& query) {
  if (!query.image)
    throw AdapterError(query.frame_id, query.region_index,
                       "command detector needs frame pixels but none were provided");

  const Image crop = crop_image(*query.image, query.crop);
  const auto crop_path =
      temp_dir_ / ("panofocus_crop_" + std::to_string(::getpid()) + "_" +
                   std::to_string(g_crop_counter.fetch_add(1)) + ".png");
  save_png(crop_path, crop);

  struct TempGuard {
    std::filesystem::path p;
    ~TempGuard() {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  } guard{crop_path};

  const std::string cmdline = command_ + " " + shell_quote(crop_path.string());
  FILE* pipe = ::popen(cmdline.c_str(), "r");
  if (!pipe) throw AdapterError(query.frame_id, query.region_index, "popen failed");
  std::string output;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
  const int status = ::pclose(pipe);
  if (status != 0)
    throw AdapterError(query.frame_id, query.region_index,
                       "command exited with status " + std::to_string(status));

  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(output);
  } catch (const nlohmann::json::exception& e) {
    throw AdapterError(query.frame_id, query.region_index,
                       std::string("malformed JSON on stdout: ") + e.what());
  }
  if (!arr.is_array())
    throw AdapterError(query.frame_id, query.region_index, "expected a JSON array on stdout");
  std::vector<Box> boxes;
  try {
    for (const auto& jb : arr) boxes.push_back(parse_detection_box(jb, "detector output"));
  } catch (const ValidationError& e) {
    throw AdapterError(query.frame_id, query.region_index, e.what());
  }
  return boxes;
}

std::unique_ptr<DetectorAdapter> make_detector(const std::string& spec) {
  if (spec.rfind("file:", 0) == 0) return std::make_unique<FileDetector>(spec.substr(5));
  if (spec.rfind("cmd:", 0) == 0) return std::make_unique<CommandDetector>(spec.substr(4));
  throw ValidationError("detector spec must start with 'file:' or 'cmd:', got '" + spec + "'");
}

}  // namespace panofocus

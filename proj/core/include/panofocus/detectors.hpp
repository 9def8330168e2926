#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "panofocus/focuser.hpp"

namespace panofocus {

// Replays canned region-local detections from a JSON-lines file, one object
// per line: {"frame_id": "...", "region": N, "boxes": [{x,y,w,h,score}]}.
// Queries with no matching (frame_id, region) entry return no boxes. Used for
// reproducible fixtures and tests.
class FileDetector : public DetectorAdapter {
 public:
  explicit FileDetector(const std::filesystem::path& jsonl_path);

  std::vector<Box> detect(const RegionQuery& query) override;
  bool concurrent_safe() const override { return true; }

 private:
  std::map<std::pair<std::string, std::size_t>, std::vector<Box>> responses_;
};

// Spawns an external command per region: writes the cropped pixels to a
// temporary PNG, appends its (shell-quoted) path to the configured command
// line, and parses one JSON array of {x,y,w,h,score} objects from the
// command's standard output. Non-zero exit status or malformed output raise
// AdapterError.
class CommandDetector : public DetectorAdapter {
 public:
  explicit CommandDetector(std::string command,
                           std::filesystem::path temp_dir = std::filesystem::temp_directory_path());

  std::vector<Box> detect(const RegionQuery& query) override;
  bool concurrent_safe() const override { return true; }

 private:
  std::string command_;
  std::filesystem::path temp_dir_;
};

// Parses a --detector specification: "file:PATH" or "cmd:COMMAND".
std::unique_ptr<DetectorAdapter> make_detector(const std::string& spec);

}  // namespace panofocus

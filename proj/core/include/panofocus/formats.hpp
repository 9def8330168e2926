#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "panofocus/evaluation.hpp"
#include "panofocus/geometry.hpp"
#include "panofocus/model.hpp"

namespace panofocus {

// Per-frame detection stream (JSON-lines, one frame per line). `order`
// preserves the file's frame order; `frames` indexes by id.
struct DetectionsFile {
  std::vector<std::string> order;
  std::map<std::string, std::vector<Box>> frames;
};

DetectionsFile load_detections(const std::filesystem::path& path);
void save_detections(const std::filesystem::path& path, const DetectionsFile& dets);
std::string detections_line(const std::string& frame_id, const std::vector<Box>& boxes);

struct ClassCounts {
  int individual = 27;
  int group = 11;
  int global = 7;
};

struct AnnotationsFile {
  std::vector<FrameAnnotation> frames;
};

AnnotationsFile load_annotations(const std::filesystem::path& path,
                                 const ClassCounts& classes = {});
void save_annotations(const std::filesystem::path& path, const AnnotationsFile& ann);

struct PredictionsFile {
  std::vector<FramePrediction> frames;
};

PredictionsFile load_predictions(const std::filesystem::path& path,
                                 const ClassCounts& classes = {});
void save_predictions(const std::filesystem::path& path, const PredictionsFile& preds);
std::string prediction_line(const FramePrediction& frame);

// weights.json: {"name": {"shape": [rows, cols], "data": [row-major...]}, ...}
void save_weights(const std::filesystem::path& path, const ModelWeights& weights);
// Validates every named matrix against the architecture implied by dims.
ModelWeights load_weights(const std::filesystem::path& path, const ModelDims& dims);

}  // namespace panofocus

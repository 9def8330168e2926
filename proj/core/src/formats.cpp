#include "panofocus/formats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "panofocus/errors.hpp"

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

double finite_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ValidationError(where + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ValidationError(where + " must be finite");
  return d;
}

const json& required(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  return obj.at(key);
}

Box parse_box(const json& jb, const std::string& where, bool allow_score) {
  if (!jb.is_object()) throw ValidationError(where + " must be an object");
  if (allow_score)
    reject_unknown_keys(jb, {"x", "y", "w", "h", "score"}, where);
  else
    reject_unknown_keys(jb, {"x", "y", "w", "h"}, where);
  Box b;
  b.x = finite_number(required(jb, "x", where), where + ".x");
  b.y = finite_number(required(jb, "y", where), where + ".y");
  b.w = finite_number(required(jb, "w", where), where + ".w");
  b.h = finite_number(required(jb, "h", where), where + ".h");
  if (allow_score && jb.contains("score"))
    b.score = finite_number(jb["score"], where + ".score");
  validate_box(b);
  return b;
}

json box_to_json(const Box& b, bool with_score) {
  json jb;
  jb["x"] = b.x;
  jb["y"] = b.y;
  jb["w"] = b.w;
  jb["h"] = b.h;
  if (with_score && b.score) jb["score"] = *b.score;
  return jb;
}

std::vector<int> parse_label_list(const json& arr, int class_count, const std::string& where) {
  if (!arr.is_array()) throw ValidationError(where + " must be an array of label indices");
  std::vector<int> labels;
  for (const auto& v : arr) {
    if (!v.is_number_integer())
      throw ValidationError(where + " must contain integer label indices");
    const int idx = v.get<int>();
    if (idx < 0 || idx >= class_count)
      throw ValidationError(where + ": label index " + std::to_string(idx) +
                            " outside [0," + std::to_string(class_count) + ")");
    labels.push_back(idx);
  }
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError(where + ": duplicate label index");
  return sorted;
}

// Runs fn over every non-empty line, reporting parse failures with their
// line number.
template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    fn(obj, path.string() + ":" + std::to_string(line_no));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

DetectionsFile load_detections(const std::filesystem::path& path) {
  DetectionsFile out;
  for_each_jsonl(path, [&](const json& obj, const std::string& where) {
    reject_unknown_keys(obj, {"frame_id", "boxes"}, where);
    const json& fid = required(obj, "frame_id", where);
    if (!fid.is_string()) throw ValidationError(where + ": 'frame_id' must be a string");
    const json& jboxes = required(obj, "boxes", where);
    if (!jboxes.is_array()) throw ValidationError(where + ": 'boxes' must be an array");
    std::vector<Box> boxes;
    for (std::size_t i = 0; i < jboxes.size(); ++i)
      boxes.push_back(parse_box(jboxes[i], where + ".boxes[" + std::to_string(i) + "]", true));
    const std::string id = fid.get<std::string>();
    if (out.frames.count(id)) throw ValidationError(where + ": duplicate frame_id '" + id + "'");
    out.order.push_back(id);
    out.frames.emplace(id, std::move(boxes));
  });
  return out;
}

std::string detections_line(const std::string& frame_id, const std::vector<Box>& boxes) {
  json obj;
  obj["frame_id"] = frame_id;
  obj["boxes"] = json::array();
  for (const Box& b : boxes) obj["boxes"].push_back(box_to_json(b, true));
  return obj.dump();
}

void save_detections(const std::filesystem::path& path, const DetectionsFile& dets) {
  std::string text;
  for (const std::string& id : dets.order)
    text += detections_line(id, dets.frames.at(id)) + "\n";
  write_text(path, text);
}

AnnotationsFile load_annotations(const std::filesystem::path& path, const ClassCounts& classes) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  const std::string where = path.string();
  reject_unknown_keys(doc, {"frames"}, where);
  const json& jframes = required(doc, "frames", where);
  if (!jframes.is_array()) throw ValidationError(where + ": 'frames' must be an array");

  AnnotationsFile out;
  std::set<std::string> frame_ids;
  for (std::size_t fi = 0; fi < jframes.size(); ++fi) {
    const json& jf = jframes[fi];
    const std::string fwhere = where + ".frames[" + std::to_string(fi) + "]";
    reject_unknown_keys(jf, {"frame_id", "image_path", "individuals", "groups", "global"},
                        fwhere);
    FrameAnnotation frame;
    const json& fid = required(jf, "frame_id", fwhere);
    if (!fid.is_string()) throw ValidationError(fwhere + ": 'frame_id' must be a string");
    frame.frame_id = fid.get<std::string>();
    if (!frame_ids.insert(frame.frame_id).second)
      throw ValidationError(fwhere + ": duplicate frame_id '" + frame.frame_id + "'");
    if (jf.contains("image_path")) {
      if (!jf["image_path"].is_string())
        throw ValidationError(fwhere + ": 'image_path' must be a string");
      frame.image_path = jf["image_path"].get<std::string>();
    }

    std::set<std::string> ids;
    for (const json& ji : required(jf, "individuals", fwhere)) {
      const std::string iwhere = fwhere + ".individuals";
      reject_unknown_keys(ji, {"id", "box", "actions"}, iwhere);
      AnnotatedIndividual ind;
      const json& jid = required(ji, "id", iwhere);
      if (!jid.is_string()) throw ValidationError(iwhere + ": 'id' must be a string");
      ind.id = jid.get<std::string>();
      if (!ids.insert(ind.id).second)
        throw ValidationError(iwhere + ": duplicate identity '" + ind.id + "'");
      ind.box = parse_box(required(ji, "box", iwhere), iwhere + ".box", false);
      ind.actions = parse_label_list(required(ji, "actions", iwhere), classes.individual,
                                     iwhere + ".actions");
      frame.individuals.push_back(std::move(ind));
    }

    std::set<std::string> grouped;
    for (const json& jg : required(jf, "groups", fwhere)) {
      const std::string gwhere = fwhere + ".groups";
      reject_unknown_keys(jg, {"members", "activities"}, gwhere);
      AnnotatedGroup group;
      for (const json& jm : required(jg, "members", gwhere)) {
        if (!jm.is_string()) throw ValidationError(gwhere + ": members must be identity strings");
        const std::string member = jm.get<std::string>();
        if (!ids.count(member))
          throw ValidationError(gwhere + ": member '" + member +
                                "' is not in the individuals list");
        if (!grouped.insert(member).second)
          throw ValidationError(gwhere + ": identity '" + member +
                                "' appears in more than one group");
        group.members.push_back(member);
      }
      if (group.members.empty()) throw ValidationError(gwhere + ": group has no members");
      group.activities = parse_label_list(required(jg, "activities", gwhere), classes.group,
                                          gwhere + ".activities");
      frame.groups.push_back(std::move(group));
    }

    frame.global_labels =
        parse_label_list(required(jf, "global", fwhere), classes.global, fwhere + ".global");
    out.frames.push_back(std::move(frame));
  }
  return out;
}

void save_annotations(const std::filesystem::path& path, const AnnotationsFile& ann) {
  json doc;
  doc["frames"] = json::array();
  for (const FrameAnnotation& frame : ann.frames) {
    json jf;
    jf["frame_id"] = frame.frame_id;
    if (!frame.image_path.empty()) jf["image_path"] = frame.image_path;
    jf["individuals"] = json::array();
    for (const AnnotatedIndividual& ind : frame.individuals) {
      json ji;
      ji["id"] = ind.id;
      ji["box"] = box_to_json(ind.box, false);
      ji["actions"] = ind.actions;
      jf["individuals"].push_back(ji);
    }
    jf["groups"] = json::array();
    for (const AnnotatedGroup& g : frame.groups) {
      json jg;
      jg["members"] = g.members;
      jg["activities"] = g.activities;
      jf["groups"].push_back(jg);
    }
    jf["global"] = frame.global_labels;
    doc["frames"].push_back(jf);
  }
  write_text(path, doc.dump(2) + "\n");
}

PredictionsFile load_predictions(const std::filesystem::path& path, const ClassCounts& classes) {
  PredictionsFile out;
  std::set<std::string> frame_ids;
  for_each_jsonl(path, [&](const json& obj, const std::string& where) {
    reject_unknown_keys(obj, {"frame_id", "individuals", "groups", "global"}, where);
    FramePrediction frame;
    const json& fid = required(obj, "frame_id", where);
    if (!fid.is_string()) throw ValidationError(where + ": 'frame_id' must be a string");
    frame.frame_id = fid.get<std::string>();
    if (!frame_ids.insert(frame.frame_id).second)
      throw ValidationError(where + ": duplicate frame_id '" + frame.frame_id + "'");

    for (const json& ji : required(obj, "individuals", where)) {
      reject_unknown_keys(ji, {"box", "score", "actions"}, where + ".individuals");
      PredictedIndividual ind;
      ind.box = parse_box(required(ji, "box", where), where + ".individuals.box", false);
      ind.score = finite_number(required(ji, "score", where), where + ".individuals.score");
      if (ind.score < 0.0 || ind.score > 1.0)
        throw ValidationError(where + ".individuals.score must lie in [0,1]");
      ind.actions = parse_label_list(required(ji, "actions", where), classes.individual,
                                     where + ".individuals.actions");
      frame.individuals.push_back(std::move(ind));
    }
    for (const json& jg : required(obj, "groups", where)) {
      reject_unknown_keys(jg, {"members", "activities"}, where + ".groups");
      PredictedGroup g;
      for (const json& jm : required(jg, "members", where + ".groups")) {
        if (!jm.is_number_integer())
          throw ValidationError(where + ".groups: members must be individual indices");
        const int idx = jm.get<int>();
        if (idx < 0 || idx >= static_cast<int>(frame.individuals.size()))
          throw ValidationError(where + ".groups: member index " + std::to_string(idx) +
                                " out of range");
        g.members.push_back(idx);
      }
      g.activities = parse_label_list(required(jg, "activities", where + ".groups"),
                                      classes.group, where + ".groups.activities");
      frame.groups.push_back(std::move(g));
    }
    frame.global_labels =
        parse_label_list(required(obj, "global", where), classes.global, where + ".global");
    out.frames.push_back(std::move(frame));
  });
  return out;
}

std::string prediction_line(const FramePrediction& frame) {
  json obj;
  obj["frame_id"] = frame.frame_id;
  obj["individuals"] = json::array();
  for (const PredictedIndividual& ind : frame.individuals) {
    json ji;
    ji["box"] = box_to_json(ind.box, false);
    ji["score"] = ind.score;
    ji["actions"] = ind.actions;
    obj["individuals"].push_back(ji);
  }
  obj["groups"] = json::array();
  for (const PredictedGroup& g : frame.groups) {
    json jg;
    jg["members"] = g.members;
    jg["activities"] = g.activities;
    obj["groups"].push_back(jg);
  }
  obj["global"] = frame.global_labels;
  return obj.dump();
}

void save_predictions(const std::filesystem::path& path, const PredictionsFile& preds) {
  std::string text;
  for (const FramePrediction& frame : preds.frames) text += prediction_line(frame) + "\n";
  write_text(path, text);
}

void save_weights(const std::filesystem::path& path, const ModelWeights& weights) {
  json doc;
  for_each_param(weights, [&doc](const std::string& name, const Eigen::MatrixXd& m) {
    json jm;
    jm["shape"] = {m.rows(), m.cols()};
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    jm["data"] = std::move(data);
    doc[name] = std::move(jm);
  });
  write_text(path, doc.dump(2) + "\n");
}

ModelWeights load_weights(const std::filesystem::path& path, const ModelDims& dims) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ValidationError(path.string() + ": expected an object of matrices");

  ModelWeights weights = zero_model(dims);
  std::set<std::string> expected;
  for_each_param(weights, [&expected](const std::string& name, const Eigen::MatrixXd&) {
    expected.insert(name);
  });
  for (const auto& [name, _] : doc.items())
    if (!expected.count(name))
      throw ValidationError(path.string() + ": unknown weight matrix '" + name + "'");

  for_each_param(weights, [&](const std::string& name, Eigen::MatrixXd& m) {
    if (!doc.contains(name))
      throw ValidationError(path.string() + ": missing weight matrix '" + name + "'");
    const json& jm = doc[name];
    reject_unknown_keys(jm, {"shape", "data"}, path.string() + ":" + name);
    const json& shape = required(jm, "shape", name);
    if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_integer() ||
        !shape[1].is_number_integer())
      throw ValidationError(name + ": 'shape' must be [rows, cols]");
    const Eigen::Index rows = shape[0].get<Eigen::Index>();
    const Eigen::Index cols = shape[1].get<Eigen::Index>();
    if (rows != m.rows() || cols != m.cols())
      throw ValidationError(name + ": shape [" + std::to_string(rows) + "," +
                            std::to_string(cols) + "] does not match the configured [" +
                            std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "]");
    const json& data = required(jm, "data", name);
    if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw ValidationError(name + ": 'data' must hold rows*cols numbers");
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        m(r, c) = finite_number(data[k++], name + ".data");
  });
  return weights;
}

}  // namespace panofocus

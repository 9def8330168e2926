#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "panofocus/config.hpp"
#include "panofocus/errors.hpp"
#include "panofocus/formats.hpp"
#include "panofocus/image.hpp"
#include "panofocus/rng.hpp"

using namespace panofocus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("panofocus_io_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path file(const std::string& name, const std::string& content) const {
    const fs::path p = path / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* kMinimalAnnotations = R"({
  "frames": [{
    "frame_id": "f1",
    "individuals": [{"id": "a", "box": {"x": 0, "y": 0, "w": 10, "h": 10}, "actions": [0]}],
    "groups": [{"members": ["a"], "activities": [1]}],
    "global": [2]
  }]
})";

}  // namespace

TEST_CASE("load_detections parses the schema example") {
  TempDir dir;
  const auto p = dir.file(
      "d.jsonl",
      R"({"frame_id":"f1","boxes":[{"x":0,"y":0,"w":10,"h":10,"score":0.9}]})" "\n");
  const DetectionsFile dets = load_detections(p);
  REQUIRE(dets.order == std::vector<std::string>{"f1"});
  REQUIRE(dets.frames.at("f1").size() == 1);
  CHECK(dets.frames.at("f1")[0].w == 10.0);
  CHECK(*dets.frames.at("f1")[0].score == 0.9);
}

TEST_CASE("load_detections edge cases and named errors") {
  TempDir dir;
  CHECK(load_detections(dir.file("empty.jsonl", "")).order.empty());

  const auto bad_score = dir.file(
      "s.jsonl", R"({"frame_id":"f1","boxes":[{"x":0,"y":0,"w":10,"h":10,"score":1.5}]})" "\n");
  CHECK_THROWS_WITH_AS(load_detections(bad_score), doctest::Contains("score"), ValidationError);

  const auto bad_w = dir.file(
      "w.jsonl", R"({"frame_id":"f1","boxes":[{"x":0,"y":0,"w":-3,"h":10}]})" "\n");
  CHECK_THROWS_WITH_AS(load_detections(bad_w), doctest::Contains("'w'"), ValidationError);

  const auto malformed = dir.file(
      "m.jsonl", std::string(R"({"frame_id":"f1","boxes":[]})") + "\n" + "{not json\n");
  CHECK_THROWS_WITH_AS(load_detections(malformed), doctest::Contains(":2"), ValidationError);

  const auto unknown = dir.file(
      "u.jsonl", R"({"frame_id":"f1","boxes":[],"extra":1})" "\n");
  CHECK_THROWS_WITH_AS(load_detections(unknown), doctest::Contains("extra"), ValidationError);

  const auto dup = dir.file(
      "dup.jsonl",
      R"({"frame_id":"f1","boxes":[]})" "\n" R"({"frame_id":"f1","boxes":[]})" "\n");
  CHECK_THROWS_WITH_AS(load_detections(dup), doctest::Contains("duplicate"), ValidationError);
}

TEST_CASE("detections survive a canonical round trip byte-for-byte") {
  TempDir dir;
  DetectionsFile dets;
  dets.order = {"f2", "f1"};
  Box a{1.25, 2.5, 3.75, 4.125};
  a.score = 0.333333333333333315;
  dets.frames["f2"] = {a};
  dets.frames["f1"] = {Box{0, 0, 1, 1}};
  const fs::path first = dir.path / "one.jsonl";
  save_detections(first, dets);
  const DetectionsFile loaded = load_detections(first);
  const fs::path second = dir.path / "two.jsonl";
  save_detections(second, loaded);
  CHECK(slurp(first) == slurp(second));
  CHECK(loaded.order == dets.order);
}

TEST_CASE("load_annotations validates structure") {
  TempDir dir;
  const AnnotationsFile ann = load_annotations(dir.file("a.json", kMinimalAnnotations));
  REQUIRE(ann.frames.size() == 1);
  CHECK(ann.frames[0].individuals[0].id == "a");
  CHECK(ann.frames[0].groups[0].members == std::vector<std::string>{"a"});

  const std::string dup_id = R"({"frames":[{"frame_id":"f","individuals":[
    {"id":"a","box":{"x":0,"y":0,"w":1,"h":1},"actions":[]},
    {"id":"a","box":{"x":5,"y":5,"w":1,"h":1},"actions":[]}],
    "groups":[],"global":[]}]})";
  CHECK_THROWS_WITH_AS(load_annotations(dir.file("dup.json", dup_id)),
                       doctest::Contains("duplicate identity"), ValidationError);

  const std::string ghost_member = R"({"frames":[{"frame_id":"f","individuals":[
    {"id":"a","box":{"x":0,"y":0,"w":1,"h":1},"actions":[]}],
    "groups":[{"members":["zz"],"activities":[]}],"global":[]}]})";
  CHECK_THROWS_WITH_AS(load_annotations(dir.file("gm.json", ghost_member)),
                       doctest::Contains("zz"), ValidationError);

  const std::string regrouped = R"({"frames":[{"frame_id":"f","individuals":[
    {"id":"a","box":{"x":0,"y":0,"w":1,"h":1},"actions":[]}],
    "groups":[{"members":["a"],"activities":[]},{"members":["a"],"activities":[]}],
    "global":[]}]})";
  CHECK_THROWS_WITH_AS(load_annotations(dir.file("rg.json", regrouped)),
                       doctest::Contains("more than one group"), ValidationError);

  const std::string big_label = R"({"frames":[{"frame_id":"f","individuals":[
    {"id":"a","box":{"x":0,"y":0,"w":1,"h":1},"actions":[27]}],
    "groups":[],"global":[]}]})";
  CHECK_THROWS_WITH_AS(load_annotations(dir.file("bl.json", big_label)),
                       doctest::Contains("27"), ValidationError);
}

TEST_CASE("annotations round trip") {
  TempDir dir;
  const AnnotationsFile ann = load_annotations(dir.file("a.json", kMinimalAnnotations));
  const fs::path first = dir.path / "one.json";
  save_annotations(first, ann);
  const AnnotationsFile again = load_annotations(first);
  const fs::path second = dir.path / "two.json";
  save_annotations(second, again);
  CHECK(slurp(first) == slurp(second));
}

TEST_CASE("predictions parse and validate member indices") {
  TempDir dir;
  const auto good = dir.file(
      "p.jsonl",
      R"({"frame_id":"f1","individuals":[{"box":{"x":0,"y":0,"w":5,"h":5},"score":0.8,"actions":[3]}],"groups":[{"members":[0],"activities":[1]}],"global":[0]})" "\n");
  const PredictionsFile preds = load_predictions(good);
  REQUIRE(preds.frames.size() == 1);
  CHECK(preds.frames[0].individuals[0].score == 0.8);

  const auto bad_member = dir.file(
      "bm.jsonl",
      R"({"frame_id":"f1","individuals":[],"groups":[{"members":[4],"activities":[]}],"global":[]})" "\n");
  CHECK_THROWS_WITH_AS(load_predictions(bad_member), doctest::Contains("out of range"),
                       ValidationError);
}

TEST_CASE("weights round trip and shape validation") {
  TempDir dir;
  ModelDims dims;
  dims.d = 4;
  dims.heads = 2;
  dims.prototypes = 2;
  dims.m_max = 4;
  const ModelWeights w = init_model(dims, 99);
  const fs::path p = dir.path / "w.json";
  save_weights(p, w);
  const ModelWeights loaded = load_weights(p, dims);
  bool equal = true;
  for_each_param(w, [&](const std::string& name, const Eigen::MatrixXd& m) {
    const ModelWeights& lw = loaded;
    for_each_param(lw, [&](const std::string& n2, const Eigen::MatrixXd& m2) {
      if (n2 == name && (m - m2).cwiseAbs().maxCoeff() != 0.0) equal = false;
    });
  });
  CHECK(equal);

  ModelDims other = dims;
  other.d = 8;
  other.heads = 2;
  CHECK_THROWS_WITH_AS(load_weights(p, other), doctest::Contains("shape"), ValidationError);

  const auto unknown = dir.file("u.json", R"({"nonsense":{"shape":[1,1],"data":[0]}})");
  CHECK_THROWS_WITH_AS(load_weights(unknown, dims), doctest::Contains("nonsense"),
                       ValidationError);

  // non-finite numerics are rejected (the parser already refuses 1e999)
  std::string text = slurp(p);
  const auto pos = text.find("data\": [");
  REQUIRE(pos != std::string::npos);
  text.replace(pos + 8, text.find_first_of(",]", pos + 8) - pos - 8, "1e999");
  CHECK_THROWS_AS(load_weights(dir.file("inf.json", text), dims), ValidationError);
  // and a null smuggled into the data array is a type error, not a crash
  std::string null_text = slurp(p);
  const auto pos2 = null_text.find("data\": [");
  null_text.replace(pos2 + 8, null_text.find_first_of(",]", pos2 + 8) - pos2 - 8, "null");
  CHECK_THROWS_WITH_AS(load_weights(dir.file("null.json", null_text), dims),
                       doctest::Contains("number"), ValidationError);
}

TEST_CASE("config defaults match the reference setting") {
  const RunConfig cfg = load_config(std::nullopt);
  CHECK(cfg.focuser.theta == 48.0);
  CHECK(cfg.focuser.beta1 == 1.5);
  CHECK(cfg.focuser.beta2 == 1.8);
  CHECK(cfg.focuser.nms_iou == 0.5);
  CHECK(cfg.lambda == 1e-3);
  CHECK(cfg.lambda_reg == 5.0);
  CHECK(cfg.dims.individual_classes == 27);
  CHECK(cfg.dims.group_classes == 11);
  CHECK(cfg.dims.global_classes == 7);
  CHECK(cfg.frame.width == 3760.0);
  CHECK(cfg.frame.height == 480.0);
  CHECK(cfg.eval_iou == 0.3);
}

TEST_CASE("config file parsing, precedence and rejection") {
  TempDir dir;
  const auto p = dir.file("c.conf",
                          "# comment line\n"
                          "nms_iou = 0.6\n"
                          "theta = 40   # trailing comment\n");
  const RunConfig cfg = load_config(p);
  CHECK(cfg.focuser.nms_iou == 0.6);
  CHECK(cfg.focuser.theta == 40.0);

  // overrides win over the file
  const RunConfig layered = load_config_with_overrides(p, {"nms_iou=0.7"});
  CHECK(layered.focuser.nms_iou == 0.7);

  CHECK_THROWS_WITH_AS(load_config(dir.file("bad.conf", "theta = -1\n")),
                       doctest::Contains("theta"), ValidationError);
  CHECK_THROWS_WITH_AS(load_config(dir.file("unk.conf", "frobnicate = 3\n")),
                       doctest::Contains("frobnicate"), ValidationError);
  CHECK_THROWS_WITH_AS(load_config(dir.file("nan.conf", "lambda = nan\n")),
                       doctest::Contains("finite"), ValidationError);
  CHECK_THROWS_AS(load_config(dir.file("junk.conf", "theta 48\n")), ValidationError);
}

TEST_CASE("PNG round trip preserves pixels") {
  TempDir dir;
  Image img = make_image(21, 13, 3);
  SeededRng rng(5);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const fs::path p = dir.path / "img.png";
  save_png(p, img);
  const Image loaded = load_image(p);
  CHECK(loaded.width == img.width);
  CHECK(loaded.height == img.height);
  CHECK(loaded.channels == img.channels);
  CHECK(loaded.pixels == img.pixels);
}

TEST_CASE("crop and resize behave at the borders") {
  Image img = make_image(10, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x) img.at(x, y, 0) = static_cast<std::uint8_t>(x + 10 * y);
  const Image crop = crop_image(img, CropWindow{2, 1, 4, 3});
  CHECK(crop.width == 4);
  CHECK(crop.height == 3);
  CHECK(crop.at(0, 0, 0) == 12);
  CHECK_THROWS_AS(crop_image(img, CropWindow{8, 6, 4, 4}), ValidationError);

  const Image up = resize_image(crop, 8, 6);
  CHECK(up.width == 8);
  CHECK(up.height == 6);
}

TEST_CASE("integer crop bounds round outward and clamp") {
  const FrameSpec frame{100, 50};
  const CropWindow w = integer_crop_bounds(Box{1.2, 2.7, 3.1, 4.2}, frame);
  CHECK(w.x == 1);
  CHECK(w.y == 2);
  CHECK(w.x + w.w == 5);   // ceil(4.3)
  CHECK(w.y + w.h == 7);   // ceil(6.9)
  const CropWindow clamped = integer_crop_bounds(Box{95.5, 45.5, 20, 20}, frame);
  CHECK(clamped.x + clamped.w == 100);
  CHECK(clamped.y + clamped.h == 50);
}

#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "panofocus/config.hpp"
#include "panofocus/detectors.hpp"
#include "panofocus/errors.hpp"
#include "panofocus/evaluation.hpp"
#include "panofocus/focuser.hpp"
#include "panofocus/formats.hpp"
#include "panofocus/model.hpp"
#include "panofocus/prototyper.hpp"
#include "panofocus/runner.hpp"
#include "panofocus/svg.hpp"

namespace panofocus::cli {

namespace fs = std::filesystem;

namespace {

RunConfig resolve_config(const CommonOpts& common) {
  std::optional<fs::path> path;
  if (common.config_path) {
    path = fs::path(*common.config_path);
  } else if (const char* env = std::getenv("PANOFOCUS_CONFIG"); env && *env) {
    path = fs::path(env);
  }
  return load_config_with_overrides(path, common.overrides);
}

fs::path resolve_frame_image(const fs::path& images_dir, const std::string& frame_id) {
  const fs::path as_is = images_dir / frame_id;
  if (fs::exists(as_is) && fs::is_regular_file(as_is)) return as_is;
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    const fs::path candidate = images_dir / (frame_id + ext);
    if (fs::exists(candidate)) return candidate;
  }
  throw ValidationError("no image for frame '" + frame_id + "' under '" + images_dir.string() +
                        "'");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
}

ModelWeights resolve_weights(const std::string& spec, const RunConfig& cfg) {
  if (spec.empty()) return init_model(cfg.dims, cfg.weights_seed);
  if (spec.rfind("file:", 0) == 0) return load_weights(spec.substr(5), cfg.dims);
  if (spec.rfind("seed:", 0) == 0) {
    std::size_t pos = 0;
    const std::string digits = spec.substr(5);
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(digits, &pos);
    } catch (const std::exception&) {
      throw ValidationError("bad weights seed '" + digits + "'");
    }
    if (pos != digits.size()) throw ValidationError("bad weights seed '" + digits + "'");
    return init_model(cfg.dims, seed);
  }
  throw ValidationError("weights spec must be 'file:PATH' or 'seed:N', got '" + spec + "'");
}

struct FocusFrameOutput {
  std::string line;  // detections.jsonl row
  std::string log;   // per-frame counts for stdout
  std::vector<std::string> warnings;
};

std::vector<FocusFrameOutput> run_focus(const RunConfig& cfg, const DetectionsFile& dets,
                                        DetectorAdapter& detector,
                                        const std::optional<std::string>& images_dir,
                                        bool skip_region_errors) {
  std::vector<FocusFrameOutput> outputs(dets.order.size());
  const int jobs = detector.concurrent_safe() ? cfg.jobs : 1;
  parallel_for(dets.order.size(), jobs, [&](std::size_t i) {
    const std::string& frame_id = dets.order[i];
    Image image;
    FrameContext ctx;
    ctx.frame_id = frame_id;
    ctx.frame = cfg.frame;
    if (images_dir) {
      image = load_image(resolve_frame_image(*images_dir, frame_id));
      ctx.image = &image;
    }
    const FocusResult result =
        run_focuser(ctx, dets.frames.at(frame_id), detector, cfg.focuser, skip_region_errors);
    std::ostringstream log;
    log << "frame " << frame_id << ": original=" << result.stats.original
        << " extended=" << result.stats.extended << " regions=" << result.stats.regions
        << " fine=" << result.stats.fine << " fused=" << result.stats.fused;
    outputs[i] = {detections_line(frame_id, result.boxes), log.str(), result.warnings};
  });
  return outputs;
}

// Index of each annotated identity, for translating GT groups to indices.
std::vector<std::vector<int>> gt_group_indices(const FrameAnnotation& frame) {
  std::map<std::string, int> index_of;
  for (std::size_t i = 0; i < frame.individuals.size(); ++i)
    index_of[frame.individuals[i].id] = static_cast<int>(i);
  std::vector<std::vector<int>> groups;
  for (const AnnotatedGroup& g : frame.groups) {
    std::vector<int> members;
    for (const std::string& id : g.members) members.push_back(index_of.at(id));
    groups.push_back(std::move(members));
  }
  return groups;
}

struct ForwardOutputs {
  std::vector<std::string> feature_lines;
  std::vector<std::string> prediction_lines;
};

ForwardOutputs run_forward(const RunConfig& cfg, const ModelWeights& weights,
                           const std::vector<ForwardFrameInput>& inputs, bool train_mode) {
  ForwardOutputs out;
  out.feature_lines.resize(inputs.size());
  out.prediction_lines.resize(inputs.size());
  parallel_for(inputs.size(), cfg.jobs, [&](std::size_t i) {
    const ForwardFrameResult result = run_forward_frame(cfg, weights, inputs[i], train_mode);
    out.feature_lines[i] = features_line(inputs[i].frame_id, result);
    out.prediction_lines[i] = prediction_line(result.prediction);
  });
  return out;
}

EvalReport run_eval(const PredictionsFile& preds, const AnnotationsFile& gt, double iou_thresh) {
  std::map<std::string, const FramePrediction*> by_id;
  for (const FramePrediction& p : preds.frames) by_id[p.frame_id] = &p;
  std::map<std::string, bool> known;
  for (const FrameAnnotation& a : gt.frames) known[a.frame_id] = true;
  for (const FramePrediction& p : preds.frames)
    if (!known.count(p.frame_id))
      throw ValidationError("prediction for unknown frame '" + p.frame_id + "'");

  std::vector<FramePrediction> ordered;
  std::vector<FrameAnnotation> annotations;
  for (const FrameAnnotation& a : gt.frames) {
    annotations.push_back(a);
    const auto it = by_id.find(a.frame_id);
    if (it != by_id.end()) {
      ordered.push_back(*it->second);
    } else {
      FramePrediction empty;
      empty.frame_id = a.frame_id;  // unpredicted frames count as empty
      ordered.push_back(empty);
    }
  }
  return evaluate_frames(ordered, annotations, iou_thresh);
}

}  // namespace

int cmd_focus(const FocusOpts& opts) {
  const RunConfig cfg = resolve_config(opts.common);
  const DetectionsFile dets = load_detections(opts.detections);
  const auto detector = make_detector(opts.detector);
  const auto outputs = run_focus(cfg, dets, *detector, opts.images_dir, opts.skip_region_errors);

  std::string text;
  for (const auto& o : outputs) {
    text += o.line + "\n";
    std::cout << o.log << "\n";
    for (const std::string& w : o.warnings) std::cerr << "warning: " << w << "\n";
  }
  write_file(opts.out, text);
  return 0;
}

int cmd_forward(const ForwardOpts& opts) {
  const RunConfig cfg = resolve_config(opts.common);
  if (opts.annotations.has_value() == opts.detections.has_value())
    throw ValidationError("pass exactly one of --annotations or --detections");
  const ModelWeights weights = resolve_weights(opts.weights, cfg);

  std::vector<ForwardFrameInput> inputs;
  std::vector<Image> images;  // stable storage backing the frame image pointers

  if (opts.annotations) {
    const AnnotationsFile ann =
        load_annotations(*opts.annotations, {cfg.dims.individual_classes, cfg.dims.group_classes,
                                             cfg.dims.global_classes });
    const fs::path ann_dir = fs::path(*opts.annotations).parent_path();
    images.reserve(ann.frames.size());
    for (const FrameAnnotation& frame : ann.frames) {
      ForwardFrameInput input;
      input.frame_id = frame.frame_id;
      for (const AnnotatedIndividual& ind : frame.individuals) input.boxes.push_back(ind.box);
      input.gt_groups = gt_group_indices(frame);
      if (!input.boxes.empty()) {
        const fs::path img_path = opts.images_dir
                                      ? resolve_frame_image(*opts.images_dir, frame.frame_id)
                                      : ann_dir / frame.image_path;
        images.push_back(load_image(img_path));
        input.image = &images.back();
      }
      inputs.push_back(std::move(input));
    }
  } else {
    if (!opts.images_dir)
      throw ValidationError("--images-dir is required when forwarding from detections");
    const DetectionsFile dets = load_detections(*opts.detections);
    images.reserve(dets.order.size());
    for (const std::string& frame_id : dets.order) {
      ForwardFrameInput input;
      input.frame_id = frame_id;
      input.boxes = dets.frames.at(frame_id);
      if (!input.boxes.empty()) {
        images.push_back(load_image(resolve_frame_image(*opts.images_dir, frame_id)));
        input.image = &images.back();
      }
      inputs.push_back(std::move(input));
    }
  }

  const ForwardOutputs out = run_forward(cfg, weights, inputs, opts.train_mode);
  std::string features_text, predictions_text;
  for (const std::string& l : out.feature_lines) features_text += l + "\n";
  for (const std::string& l : out.prediction_lines) predictions_text += l + "\n";
  if (!opts.out_features.empty()) write_file(opts.out_features, features_text);
  if (!opts.out_predictions.empty()) write_file(opts.out_predictions, predictions_text);
  std::cout << "forwarded " << inputs.size() << " frames\n";
  return 0;
}

int cmd_gradcheck(const GradCheckOpts& opts) {
  RunConfig cfg = resolve_config(opts.common);
  cfg.dims.d = opts.d;
  cfg.dims.heads = opts.heads;
  cfg.dims.prototypes = opts.prototypes;
  cfg.dims.m_max = opts.m_max;
  cfg.dims.validate();

  const ModelWeights weights = opts.weights
                                   ? load_weights(*opts.weights, cfg.dims)
                                   : init_model(cfg.dims, opts.seed, opts.init_std);
  SceneSample scene = make_synthetic_scene(cfg.dims, opts.individuals, opts.groups,
                                           opts.patch_tokens, opts.seed + 1);
  scene.lambda = cfg.lambda;
  scene.lambda_reg = cfg.lambda_reg;

  const auto rows = gradient_check_model(weights, scene, opts.epsilon);

  std::cout << "gradient check: d=" << opts.d << " Q=" << opts.individuals
            << " L=" << opts.groups << " epsilon=" << opts.epsilon << "\n";
  double worst = 0.0;
  bool all_ok = true;
  for (const GradCheckRow& row : rows) {
    const bool ok = row.max_rel_err < opts.tolerance;
    all_ok = all_ok && ok;
    worst = std::max(worst, row.max_rel_err);
    std::cout << (ok ? "  ok   " : "  FAIL ") << row.name;
    for (std::size_t pad = row.name.size(); pad < 22; ++pad) std::cout << ' ';
    std::cout << row.rows << "x" << row.cols << "\tmax_rel_err=" << row.max_rel_err << "\n";
  }
  std::cout << (all_ok ? "PASS" : "FAIL") << ": " << rows.size()
            << " matrices, worst max_rel_err=" << worst << " (tolerance " << opts.tolerance
            << ")\n";
  return all_ok ? 0 : 1;
}

int cmd_eval(const EvalOpts& opts) {
  const RunConfig cfg = resolve_config(opts.common);
  const ClassCounts classes{cfg.dims.individual_classes, cfg.dims.group_classes,
                            cfg.dims.global_classes};
  const AnnotationsFile gt = load_annotations(opts.ground_truth, classes);
  const PredictionsFile preds = load_predictions(opts.predictions, classes);
  const double iou_thresh = opts.iou.value_or(cfg.eval_iou);
  const EvalReport report = run_eval(preds, gt, iou_thresh);
  std::cout << report_to_text(report);
  if (opts.json_out) write_file(*opts.json_out, report_to_json(report));
  return 0;
}

int cmd_render(const RenderOpts& opts) {
  const RunConfig cfg = resolve_config(opts.common);
  if (opts.detections.has_value() == opts.predictions.has_value())
    throw ValidationError("pass exactly one of --detections or --pred");
  if (opts.fused && !opts.detections)
    throw ValidationError("--fused only makes sense together with --detections");
  fs::create_directories(opts.out_dir);

  struct FrameLayers {
    std::string frame_id;
    std::vector<SvgLayer> layers;
  };
  std::vector<FrameLayers> frames;

  if (opts.detections) {
    const DetectionsFile dets = load_detections(*opts.detections);
    std::optional<DetectionsFile> fused;
    if (opts.fused) fused = load_detections(*opts.fused);
    for (const std::string& id : dets.order) {
      FrameLayers fl;
      fl.frame_id = id;
      SvgLayer original;
      original.boxes = dets.frames.at(id);
      original.stroke = "#8a8a8a";
      fl.layers.push_back(original);
      if (fused && fused->frames.count(id)) {
        // Fused boxes absent from the original pass are the fine-grained
        // additions; draw them in red.
        SvgLayer added;
        added.stroke = "#e03131";
        for (const Box& b : fused->frames.at(id)) {
          const bool in_original =
              std::any_of(original.boxes.begin(), original.boxes.end(), [&b](const Box& o) {
                return o.x == b.x && o.y == b.y && o.w == b.w && o.h == b.h;
              });
          if (!in_original) added.boxes.push_back(b);
        }
        fl.layers.push_back(added);
      }
      frames.push_back(std::move(fl));
    }
  } else {
    const PredictionsFile preds = load_predictions(
        *opts.predictions,
        {cfg.dims.individual_classes, cfg.dims.group_classes, cfg.dims.global_classes});
    for (const FramePrediction& p : preds.frames) {
      FrameLayers fl;
      fl.frame_id = p.frame_id;
      SvgLayer individuals;
      individuals.stroke = "#8a8a8a";
      for (const PredictedIndividual& ind : p.individuals) individuals.boxes.push_back(ind.box);
      SvgLayer groups;
      groups.stroke = "#1c7ed6";
      groups.dash = "6,3";
      for (const PredictedGroup& g : p.groups) {
        if (g.members.empty()) continue;
        Box bounds = p.individuals[static_cast<std::size_t>(g.members.front())].box;
        for (std::size_t k = 1; k < g.members.size(); ++k)
          bounds = union_box(bounds, p.individuals[static_cast<std::size_t>(g.members[k])].box);
        groups.boxes.push_back(bounds);
      }
      fl.layers.push_back(std::move(individuals));
      fl.layers.push_back(std::move(groups));
      frames.push_back(std::move(fl));
    }
  }

  for (const auto& fl : frames) {
    double width = cfg.frame.width;
    double height = cfg.frame.height;
    std::string href;
    if (opts.images_dir) {
      const fs::path img = resolve_frame_image(*opts.images_dir, fl.frame_id);
      const Image probe = load_image(img);
      width = probe.width;
      height = probe.height;
      std::error_code ec;
      const fs::path rel = fs::relative(img, opts.out_dir, ec);
      href = ec ? img.string() : rel.string();
    }
    write_file(fs::path(opts.out_dir) / (fl.frame_id + ".svg"),
               render_svg(width, height, href, fl.layers));
  }
  std::cout << "rendered " << frames.size() << " frames to " << opts.out_dir << "\n";
  return 0;
}

int cmd_pipeline(const PipelineOpts& opts) {
  const RunConfig cfg = resolve_config(opts.common);
  const ClassCounts classes{cfg.dims.individual_classes, cfg.dims.group_classes,
                            cfg.dims.global_classes};

  const auto stage = [](const char* name, const auto& fn) {
    try {
      return fn();
    } catch (const InternalError&) {
      throw;
    } catch (const Error& e) {
      throw ValidationError("stage " + std::string(name) + ": " + e.what());
    }
  };

  // Validate every input up front so --dry-run catches problems without
  // writing anything.
  const DetectionsFile dets = stage("focus", [&] { return load_detections(opts.detections); });
  const AnnotationsFile gt =
      stage("eval", [&] { return load_annotations(opts.ground_truth, classes); });
  const auto detector = stage("focus", [&] { return make_detector(opts.detector); });
  if (opts.images_dir)
    stage("forward", [&] {
      for (const std::string& id : dets.order) resolve_frame_image(*opts.images_dir, id);
      return 0;
    });

  if (opts.dry_run) {
    std::cout << "dry run: " << dets.order.size() << " detection frames, " << gt.frames.size()
              << " annotated frames, detector ready\n";
    return 0;
  }
  if (!opts.images_dir) throw ValidationError("stage forward: --images-dir is required");

  fs::create_directories(opts.out_dir);
  const fs::path out_dir(opts.out_dir);

  // Stage 1: size-adapting detection.
  const auto focus_outputs = stage("focus", [&] {
    return run_focus(cfg, dets, *detector, opts.images_dir, opts.skip_region_errors);
  });
  std::string fused_text;
  for (const auto& o : focus_outputs) {
    fused_text += o.line + "\n";
    std::cout << o.log << "\n";
    for (const std::string& w : o.warnings) std::cerr << "warning: " << w << "\n";
  }
  const fs::path fused_path = out_dir / "fused_detections.jsonl";
  write_file(fused_path, fused_text);

  // Stage 2: recognition over the fused detections; groups come from center
  // clustering because predicted frames carry no ground-truth memberships.
  const DetectionsFile fused = stage("forward", [&] { return load_detections(fused_path); });
  const ModelWeights weights = init_model(cfg.dims, cfg.weights_seed);
  std::vector<ForwardFrameInput> inputs;
  std::vector<Image> images;
  images.reserve(fused.order.size());
  for (const std::string& frame_id : fused.order) {
    ForwardFrameInput input;
    input.frame_id = frame_id;
    input.boxes = fused.frames.at(frame_id);
    if (!input.boxes.empty()) {
      images.push_back(load_image(resolve_frame_image(*opts.images_dir, frame_id)));
      input.image = &images.back();
    }
    inputs.push_back(std::move(input));
  }
  const ForwardOutputs fwd =
      stage("forward", [&] { return run_forward(cfg, weights, inputs, false); });
  std::string features_text, predictions_text;
  for (const std::string& l : fwd.feature_lines) features_text += l + "\n";
  for (const std::string& l : fwd.prediction_lines) predictions_text += l + "\n";
  write_file(out_dir / "features.jsonl", features_text);
  const fs::path pred_path = out_dir / "predictions.jsonl";
  write_file(pred_path, predictions_text);

  // Stage 3: multi-granularity scoring.
  const EvalReport report = stage("eval", [&] {
    const PredictionsFile preds = load_predictions(pred_path, classes);
    return run_eval(preds, gt, cfg.eval_iou);
  });
  write_file(out_dir / "report.json", report_to_json(report));
  std::cout << report_to_text(report);
  return 0;
}

}  // namespace panofocus::cli

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "panofocus/errors.hpp"

namespace {

void add_common(CLI::App* cmd, panofocus::cli::CommonOpts& common) {
  cmd->add_option("--config", common.config_path,
                  "Config file (key = value); PANOFOCUS_CONFIG is the fallback");
  cmd->add_option("--set", common.overrides, "Config override key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "panofocus: size-adapting detection refinement, hierarchical prototype encoding, and "
      "multi-granularity activity evaluation"};
  app.set_version_flag("--version", "panofocus 0.1.0");
  app.require_subcommand(1);

  using namespace panofocus::cli;
  std::function<int()> action;

  FocusOpts focus;
  {
    CLI::App* c = app.add_subcommand("focus", "Refine a detections file through the adapt-focuser");
    add_common(c, focus.common);
    c->add_option("--detections", focus.detections, "Input detections.jsonl")->required();
    c->add_option("--detector", focus.detector, "file:PATH or cmd:COMMAND")->required();
    c->add_option("--out", focus.out, "Output detections.jsonl")->required();
    c->add_option("--images-dir", focus.images_dir, "Frame images (needed by cmd: detectors)");
    c->add_flag("--skip-region-errors", focus.skip_region_errors,
                "Downgrade adapter failures to warnings");
    c->callback([&] { action = [&] { return cmd_focus(focus); }; });
  }

  ForwardOpts forward;
  {
    CLI::App* c = app.add_subcommand("forward", "Run the hierarchical encoder over frames");
    add_common(c, forward.common);
    c->add_option("--annotations", forward.annotations,
                  "annotations.json (ground-truth boxes and memberships)");
    c->add_option("--detections", forward.detections, "detections.jsonl (clustered groups)");
    c->add_option("--weights", forward.weights, "file:PATH or seed:N (default: config seed)");
    c->add_option("--images-dir", forward.images_dir, "Frame images directory");
    c->add_option("--out", forward.out_features, "features.jsonl output");
    c->add_option("--out-pred", forward.out_predictions, "predictions.jsonl output");
    c->add_flag("--train-mode", forward.train_mode, "Enable seeded attention noise");
    c->add_flag("!--eval-mode", forward.train_mode, "Disable attention noise (default)");
    c->callback([&] { action = [&] { return cmd_forward(forward); }; });
  }

  GradCheckOpts gradcheck;
  {
    CLI::App* c = app.add_subcommand("gradcheck",
                                     "Verify analytic gradients against finite differences");
    add_common(c, gradcheck.common);
    c->add_option("--seed", gradcheck.seed, "Weights/scene seed");
    c->add_option("--dims", gradcheck.d, "Embedding dimension d");
    c->add_option("--heads", gradcheck.heads, "Attention heads");
    c->add_option("--prototypes", gradcheck.prototypes, "Prototypes per level");
    c->add_option("--m-max", gradcheck.m_max, "Positional table size");
    c->add_option("--individuals", gradcheck.individuals, "Scene individuals Q");
    c->add_option("--groups", gradcheck.groups, "Scene groups L");
    c->add_option("--patch-tokens", gradcheck.patch_tokens, "Patch tokens per individual");
    c->add_option("--epsilon", gradcheck.epsilon, "Central difference step");
    c->add_option("--tolerance", gradcheck.tolerance, "Max relative error to pass");
    c->add_option("--init-std", gradcheck.init_std,
                  "Stddev of the random checkpoint (larger keeps differences conditioned)");
    c->add_option("--weights", gradcheck.weights, "weights.json to check instead of seeded init");
    c->callback([&] { action = [&] { return cmd_gradcheck(gradcheck); }; });
  }

  EvalOpts eval;
  {
    CLI::App* c = app.add_subcommand("eval", "Score predictions against annotations");
    add_common(c, eval.common);
    c->add_option("--pred", eval.predictions, "predictions.jsonl")->required();
    c->add_option("--gt", eval.ground_truth, "annotations.json")->required();
    c->add_option("--iou", eval.iou, "Individual/member IoU threshold (default 0.3)");
    c->add_option("--json", eval.json_out, "Write the report as JSON here");
    c->callback([&] { action = [&] { return cmd_eval(eval); }; });
  }

  RenderOpts render;
  {
    CLI::App* c = app.add_subcommand("render", "Render detection overlays as SVG");
    add_common(c, render.common);
    c->add_option("--detections", render.detections, "detections.jsonl (gray boxes)");
    c->add_option("--fused", render.fused,
                  "Fused detections; boxes new vs --detections draw red");
    c->add_option("--pred", render.predictions, "predictions.jsonl (individuals + groups)");
    c->add_option("--images-dir", render.images_dir, "Frame images to embed");
    c->add_option("--out-dir", render.out_dir, "Output directory")->required();
    c->callback([&] { action = [&] { return cmd_render(render); }; });
  }

  PipelineOpts pipeline;
  {
    CLI::App* c = app.add_subcommand("pipeline", "focus -> forward -> eval in one run");
    add_common(c, pipeline.common);
    c->add_option("--detections", pipeline.detections, "Original detections.jsonl")->required();
    c->add_option("--detector", pipeline.detector, "file:PATH or cmd:COMMAND")->required();
    c->add_option("--gt", pipeline.ground_truth, "annotations.json")->required();
    c->add_option("--out-dir", pipeline.out_dir, "Artifact directory")->required();
    c->add_option("--images-dir", pipeline.images_dir, "Frame images directory");
    c->add_flag("--skip-region-errors", pipeline.skip_region_errors,
                "Downgrade adapter failures to warnings");
    c->add_flag("--dry-run", pipeline.dry_run, "Validate inputs, write nothing");
    c->callback([&] { action = [&] { return cmd_pipeline(pipeline); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return action();
  } catch (const panofocus::InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const panofocus::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

#include "panofocus/runner.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "panofocus/errors.hpp"
#include "panofocus/rng.hpp"

namespace panofocus {

namespace {

std::vector<int> threshold_labels(const Eigen::RowVectorXd& logits, double threshold) {
  // sigmoid(z) > t  <=>  z > log(t / (1-t))
  const double cutoff = std::log(threshold / (1.0 - threshold));
  std::vector<int> labels;
  for (Eigen::Index c = 0; c < logits.size(); ++c)
    if (logits(c) > cutoff) labels.push_back(static_cast<int>(c));
  return labels;
}

}  // namespace

ForwardFrameResult run_forward_frame(const RunConfig& cfg, const ModelWeights& weights,
                                     const ForwardFrameInput& input, bool train_mode) {
  ForwardFrameResult result;
  result.prediction.frame_id = input.frame_id;

  if (input.boxes.empty()) {
    // Zero-token guard: no individuals, predict global labels from a zero
    // feature so the frame still yields a (possibly empty) global estimate.
    const Eigen::RowVectorXd glo_logits =
        weights.heads.b_glo.row(0);  // zero feature times W is zero
    result.prediction.global_labels = threshold_labels(glo_logits, cfg.pred_threshold);
    return result;
  }

  if (!input.image)
    throw ValidationError("frame '" + input.frame_id + "' has no image to embed individuals from");

  std::vector<PatchEmbedding> patches;
  patches.reserve(input.boxes.size());
  const FrameSpec image_frame{static_cast<double>(input.image->width),
                              static_cast<double>(input.image->height)};
  for (std::size_t q = 0; q < input.boxes.size(); ++q) {
    const CropWindow win = integer_crop_bounds(input.boxes[q], image_frame);
    const Image crop = crop_image(*input.image, win);
    patches.push_back(embed_individual(crop, cfg.patch_size, cfg.dims.d, cfg.weights_seed,
                                       static_cast<int>(q)));
  }

  if (input.gt_groups) {
    for (const auto& members : *input.gt_groups) {
      GroupProposal g;
      g.member_indices = members;
      bool first = true;
      for (int m : members) {
        const Box& b = input.boxes.at(static_cast<std::size_t>(m));
        Box stripped{b.x, b.y, b.w, b.h};
        g.bounds = first ? stripped : union_box(g.bounds, stripped);
        first = false;
      }
      result.groups.push_back(std::move(g));
    }
  } else {
    result.groups = propose_groups(input.boxes, cfg.grouping_threshold);
  }

  GumbelConfig gumbel;
  if (train_mode) {
    gumbel.enabled = true;
    gumbel.seed = stable_hash64(input.frame_id, cfg.gumbel_seed);
  }

  BppFeatures features = forward_bipropagate(patches, result.groups, weights, gumbel);
  const RecognitionLogits logits = recognition_heads(features, weights);

  for (std::size_t q = 0; q < input.boxes.size(); ++q) {
    PredictedIndividual ind;
    ind.box = Box{input.boxes[q].x, input.boxes[q].y, input.boxes[q].w, input.boxes[q].h};
    ind.score = input.boxes[q].score.value_or(1.0);
    ind.actions = threshold_labels(logits.individual.row(static_cast<Eigen::Index>(q)),
                                   cfg.pred_threshold);
    result.prediction.individuals.push_back(std::move(ind));
  }
  for (std::size_t g = 0; g < result.groups.size(); ++g) {
    PredictedGroup pg;
    pg.members = result.groups[g].member_indices;
    pg.activities =
        threshold_labels(logits.group.row(static_cast<Eigen::Index>(g)), cfg.pred_threshold);
    result.prediction.groups.push_back(std::move(pg));
  }
  result.prediction.global_labels = threshold_labels(logits.global.row(0), cfg.pred_threshold);
  result.features = std::move(features);
  return result;
}

std::string features_line(const std::string& frame_id, const ForwardFrameResult& result) {
  nlohmann::json obj;
  obj["frame_id"] = frame_id;
  const auto matrix_to_json = [](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  if (result.features) {
    obj["f_ind"] = matrix_to_json(result.features->f_ind);
    obj["f_gro"] = matrix_to_json(result.features->f_gro);
    nlohmann::json glo = nlohmann::json::array();
    for (Eigen::Index c = 0; c < result.features->f_glo.cols(); ++c)
      glo.push_back(result.features->f_glo(0, c));
    obj["f_glo"] = std::move(glo);
  } else {
    obj["f_ind"] = nlohmann::json::array();
    obj["f_gro"] = nlohmann::json::array();
    obj["f_glo"] = nlohmann::json::array();
  }
  return obj.dump();
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  unsigned workers = jobs > 0 ? static_cast<unsigned>(jobs) : std::thread::hardware_concurrency();
  if (workers == 0) workers = 1;
  workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  // The lowest-index failure is reported so errors do not depend on thread
  // scheduling.
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::size_t first_error_index = n;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (i < first_error_index) {
            first_error = std::current_exception();
            first_error_index = i;
          }
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace panofocus

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "panofocus/featurizer.hpp"
#include "panofocus/geometry.hpp"
#include "panofocus/model.hpp"

namespace panofocus {

// Per-prototype attention noise. When enabled, each attention call draws one
// Gumbel(0,1) sample per prototype from a generator seeded here; amplitude
// scales the draws (1 = faithful, ->0 recovers the disabled limit).
struct GumbelConfig {
  bool enabled = false;
  std::uint64_t seed = 0;
  double amplitude = 1.0;
};

struct UmeAttentionResult {
  Eigen::MatrixXd cls_out;  // 1 x d, the CLS row of hidden
  Eigen::MatrixXd hidden;   // (M+1) x d
  std::vector<Eigen::MatrixXd> attention;  // per-head (M+1) x (M+1) rows-sum-to-1
};

// CLS-prepended, position-added self-attention block with residual MLP.
UmeAttentionResult ume_self_attention(const TokenMatrix& x, const UbeWeights& w);

struct PrototypeAttentionResult {
  Eigen::MatrixXd pooled;      // o_r, 1 x d: mean of updated prototypes
  Eigen::MatrixXd similarity;  // A, M x J: softmax over prototypes per token
  Eigen::MatrixXd updated;     // J x d
  int guarded = 0;             // prototypes whose total weight fell below the guard
};

PrototypeAttentionResult prototype_attention(const TokenMatrix& x, const PrototypeBank& bank,
                                             const UbeWeights& w,
                                             const GumbelConfig& gumbel = {});

// Bottom-up feature for one token set: CLS output plus pooled prototypes.
Eigen::MatrixXd ube_bottom_up(const TokenMatrix& x, const PrototypeBank& bank,
                              const UbeWeights& w, const GumbelConfig& gumbel = {});

struct CmeResult {
  Eigen::MatrixXd pooled;                  // 1 x d
  std::vector<Eigen::MatrixXd> attention;  // per-head M x 1 cross-attention weights
};

// Top-down refinement: cross-attention from low-level tokens onto the
// higher-level feature, residual MLP, then average pooling over tokens.
CmeResult cme_top_down(const TokenMatrix& x_low, const Eigen::MatrixXd& o_high,
                       const UbeWeights& w);

struct BppFeatures {
  Eigen::MatrixXd f_ind_pre;  // Q x d bottom-up individual features
  Eigen::MatrixXd f_gro_pre;  // L x d bottom-up group features
  Eigen::MatrixXd f_glo;      // 1 x d
  Eigen::MatrixXd f_gro;      // L x d after global->group refinement
  Eigen::MatrixXd f_ind;      // Q x d after group->individual refinement
  int guarded = 0;
};

// Full bidirectional chain over one frame's individuals and groups. Groups
// must partition the individual indices exactly.
BppFeatures forward_bipropagate(const std::vector<PatchEmbedding>& patches,
                                const std::vector<GroupProposal>& groups,
                                const ModelWeights& weights, const GumbelConfig& gumbel = {});

struct RecognitionLogits {
  Eigen::MatrixXd individual;  // Q x 27
  Eigen::MatrixXd group;       // L x 11
  Eigen::MatrixXd global;      // 1 x 7
  Eigen::MatrixXd affinity;    // Q x Q same-group logits
};

RecognitionLogits recognition_heads(const BppFeatures& features, const ModelWeights& weights);

struct RecognitionLabels {
  Eigen::MatrixXd individual;  // Q x 27 multi-hot
  Eigen::MatrixXd group;       // L x 11
  Eigen::MatrixXd global;      // 1 x 7
  Eigen::MatrixXd same_group;  // Q x Q indicator (1 on the diagonal)
};

struct RecognitionLoss {
  double l_i = 0, l_s = 0, l_g = 0, l_d = 0;
  double sum() const { return l_i + l_s + l_g + l_d; }
};

RecognitionLoss recognition_loss(const RecognitionLogits& logits, const RecognitionLabels& labels);

struct PredictedBox {
  Box box;
  double objectness_logit = 0;
  double class_logit = 0;  // person-vs-background logit
};

struct DetectionLoss {
  double l_reg = 0, l_obj = 0, l_cls = 0;
  double lambda_reg = 5.0;
  double sum() const { return lambda_reg * l_reg + l_obj + l_cls; }
};

// Greedy one-to-one IoU assignment, then 1-IoU regression, objectness BCE
// over all predictions, and person-class BCE over matched predictions.
DetectionLoss detection_loss(const std::vector<PredictedBox>& pred, const std::vector<Box>& gt,
                             double lambda_reg = 5.0);

double total_loss(double l_rec, double l_det, double lambda);

struct LossReport {
  DetectionLoss det;
  RecognitionLoss rec;
  double lambda = 1e-3;
  double total = 0;
};

// One self-contained training example for loss and gradient verification.
struct SceneSample {
  std::vector<Eigen::MatrixXd> patch_tokens;    // per individual, N_q x d
  std::vector<std::vector<int>> group_members;  // partition of 0..Q-1
  RecognitionLabels labels;
  std::vector<Box> det_boxes;    // predicted boxes (geometry only)
  Eigen::MatrixXd det_logits;    // n_pred x 2: objectness, class
  std::vector<Box> det_gt;
  double lambda = 1e-3;
  double lambda_reg = 5.0;
  GumbelConfig gumbel;  // frozen per evaluation: same seed, same draws
};

// Builds the differentiable graph for the scene, returning all loss terms.
// When grads is non-null, also runs the backward pass and stores
// d(total)/d(param) for every named model parameter plus "det.logits".
LossReport evaluate_scene(const ModelWeights& weights, const SceneSample& scene,
                          std::map<std::string, Eigen::MatrixXd>* grads = nullptr,
                          BppFeatures* features_out = nullptr);

// Central finite differences of the loss closure against the analytic
// gradient, perturbing param in place (restored afterwards). Returns
// max_entries |g_a - g_n| / max(1e-8, |g_a| + |g_n|). Throws ValidationError
// when two base evaluations of the closure disagree.
double gradient_check(const std::function<double()>& loss, Eigen::MatrixXd& param,
                      const Eigen::MatrixXd& analytic, double epsilon);

struct GradCheckRow {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  double max_rel_err = 0;
};

// gradient_check over every named model parameter and the scene's detection
// logits, against one analytic backward pass.
std::vector<GradCheckRow> gradient_check_model(const ModelWeights& weights,
                                               const SceneSample& scene, double epsilon);

// Deterministic random scene for the verification harness.
SceneSample make_synthetic_scene(const ModelDims& dims, int individuals, int groups,
                                 int patch_tokens, std::uint64_t seed);

}  // namespace panofocus

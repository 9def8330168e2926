#include "panofocus/prototyper.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "panofocus/autodiff.hpp"
#include "panofocus/errors.hpp"
#include "panofocus/rng.hpp"

namespace panofocus {

using autodiff::Mat;
using autodiff::Tape;
using NodeId = Tape::NodeId;

namespace {

constexpr double kProtoGuardEps = 1e-12;

// Node ids of one block's weights on a tape.
struct UbeNodes {
  NodeId cls, pos;
  NodeId msa_wq, msa_wk, msa_wv, msa_wo;
  NodeId mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  NodeId proto_wq, proto_wk, proto_wv, proto_wo;
  NodeId mca_wq, mca_wk, mca_wv, mca_wo;
  NodeId bank;
  int heads = 1;
};

UbeNodes register_ube(Tape& t, const UbeWeights& w, const Eigen::MatrixXd& bank, bool track) {
  const auto reg = [&](const Eigen::MatrixXd& m) { return track ? t.leaf(m) : t.constant(m); };
  UbeNodes n;
  n.cls = reg(w.cls);
  n.pos = reg(w.positional);
  n.msa_wq = reg(w.msa.wq);
  n.msa_wk = reg(w.msa.wk);
  n.msa_wv = reg(w.msa.wv);
  n.msa_wo = reg(w.msa.wo);
  n.mlp_w1 = reg(w.mlp.w1);
  n.mlp_b1 = reg(w.mlp.b1);
  n.mlp_w2 = reg(w.mlp.w2);
  n.mlp_b2 = reg(w.mlp.b2);
  n.proto_wq = reg(w.proto.wq);
  n.proto_wk = reg(w.proto.wk);
  n.proto_wv = reg(w.proto.wv);
  n.proto_wo = reg(w.proto.wo);
  n.mca_wq = reg(w.mca.wq);
  n.mca_wk = reg(w.mca.wk);
  n.mca_wv = reg(w.mca.wv);
  n.mca_wo = reg(w.mca.wo);
  n.bank = reg(bank);
  n.heads = w.heads;
  return n;
}

// Multi-head attention with queries from q_in and keys/values from kv_in.
// attn_out, when given, collects each head's row-stochastic weight matrix.
NodeId build_mha(Tape& t, NodeId q_in, NodeId kv_in, NodeId wq, NodeId wk, NodeId wv, NodeId wo,
                 int heads, std::vector<NodeId>* attn_out = nullptr) {
  const int d = static_cast<int>(t.value(wq).cols());
  const int dh = d / heads;
  const NodeId q = t.matmul(q_in, wq);
  const NodeId k = t.matmul(kv_in, wk);
  const NodeId v = t.matmul(kv_in, wv);
  std::vector<NodeId> outputs;
  outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const NodeId qh = t.cols(q, h * dh, dh);
    const NodeId kh = t.cols(k, h * dh, dh);
    const NodeId vh = t.cols(v, h * dh, dh);
    const NodeId scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    const NodeId attn = t.softmax_rows(scores);
    if (attn_out) attn_out->push_back(attn);
    outputs.push_back(t.matmul(attn, vh));
  }
  return t.matmul(t.hstack(outputs), wo);
}

NodeId build_mlp(Tape& t, NodeId x, const UbeNodes& u) {
  const NodeId hidden = t.gelu(t.add_row_broadcast(t.matmul(x, u.mlp_w1), u.mlp_b1));
  return t.add_row_broadcast(t.matmul(hidden, u.mlp_w2), u.mlp_b2);
}

struct UmeBuild {
  NodeId cls_out;
  NodeId hidden;
  std::vector<NodeId> attention;
};

UmeBuild build_ume_self_attention(Tape& t, NodeId x, const UbeNodes& u) {
  const Eigen::Index m = t.value(x).rows();
  if (m + 1 > t.value(u.pos).rows())
    throw ValidationError("token count " + std::to_string(m) +
                          " exceeds the positional table (m_max " +
                          std::to_string(t.value(u.pos).rows() - 1) + ")");
  UmeBuild b;
  const NodeId z = t.add(t.vstack({u.cls, x}), t.rows(u.pos, 0, static_cast<int>(m) + 1));
  const NodeId zbar =
      t.add(build_mha(t, z, z, u.msa_wq, u.msa_wk, u.msa_wv, u.msa_wo, u.heads, &b.attention), z);
  b.hidden = t.add(build_mlp(t, zbar, u), zbar);
  b.cls_out = t.rows(b.hidden, 0, 1);
  return b;
}

struct ProtoBuild {
  NodeId pooled;
  NodeId similarity;
  NodeId updated;
  int guarded = 0;
};

ProtoBuild build_prototype_attention(Tape& t, NodeId x, const UbeNodes& u,
                                     const Eigen::RowVectorXd* noise) {
  ProtoBuild b;
  const NodeId keys = t.matmul(x, u.proto_wk);            // M x d
  const NodeId queries = t.matmul(u.bank, u.proto_wq);    // J x d
  NodeId logits = t.matmul(keys, t.transpose(queries));   // M x J
  if (noise) logits = t.add_row_broadcast(logits, t.constant(*noise));
  b.similarity = t.softmax_rows(logits);

  const Eigen::Index m = t.value(x).rows();
  const NodeId values = t.matmul(x, u.proto_wv);  // M x d
  const NodeId weight_sums = t.matmul(t.transpose(b.similarity), t.constant(Mat::Ones(m, 1)));
  const NodeId pooled_tokens = t.rowwise_div_guarded(
      t.matmul(t.transpose(b.similarity), values), weight_sums, kProtoGuardEps, &b.guarded);
  b.updated = t.add(u.bank, t.matmul(pooled_tokens, u.proto_wo));
  b.pooled = t.mean_rows(b.updated);
  return b;
}

struct GumbelDraws {
  bool enabled = false;
  SeededRng rng{0};
  double amplitude = 1.0;

  explicit GumbelDraws(const GumbelConfig& cfg)
      : enabled(cfg.enabled), rng(cfg.seed), amplitude(cfg.amplitude) {}

  // One draw per prototype, shared by all tokens of the call.
  std::optional<Eigen::RowVectorXd> next(int prototypes) {
    if (!enabled) return std::nullopt;
    Eigen::RowVectorXd g(prototypes);
    for (int j = 0; j < prototypes; ++j) g(j) = amplitude * rng.gumbel();
    return g;
  }
};

NodeId build_ube_bottom_up(Tape& t, NodeId x, const UbeNodes& u, GumbelDraws& noise,
                           int* guarded) {
  const UmeBuild ume = build_ume_self_attention(t, x, u);
  const auto gamma = noise.next(static_cast<int>(t.value(u.bank).rows()));
  const ProtoBuild proto =
      build_prototype_attention(t, x, u, gamma ? &*gamma : nullptr);
  if (guarded) *guarded += proto.guarded;
  return t.add(ume.cls_out, proto.pooled);
}

struct CmeBuild {
  NodeId pooled;
  std::vector<NodeId> attention;
};

CmeBuild build_cme_top_down(Tape& t, NodeId x_low, NodeId o_high, const UbeNodes& u) {
  CmeBuild b;
  const NodeId xbar = t.add(
      build_mha(t, x_low, o_high, u.mca_wq, u.mca_wk, u.mca_wv, u.mca_wo, u.heads, &b.attention),
      x_low);
  b.pooled = t.mean_rows(t.add(build_mlp(t, xbar, u), xbar));
  return b;
}

void check_dim(const Eigen::MatrixXd& m, int d, const char* what) {
  if (m.cols() != d)
    throw ValidationError(std::string(what) + " has dimension " + std::to_string(m.cols()) +
                          ", expected " + std::to_string(d));
}

// Validates that groups partition 0..Q-1 and returns the group of each
// individual.
std::vector<int> group_assignment(std::size_t individuals,
                                  const std::vector<std::vector<int>>& groups) {
  std::vector<int> assignment(individuals, -1);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw ValidationError("group " + std::to_string(g) + " is empty");
    for (int q : groups[g]) {
      if (q < 0 || static_cast<std::size_t>(q) >= individuals)
        throw ValidationError("group member index " + std::to_string(q) + " out of range");
      if (assignment[q] != -1)
        throw ValidationError("individual " + std::to_string(q) + " belongs to two groups");
      assignment[q] = static_cast<int>(g);
    }
  }
  for (std::size_t q = 0; q < individuals; ++q)
    if (assignment[q] == -1)
      throw ValidationError("individual " + std::to_string(q) + " is not covered by any group");
  return assignment;
}

struct ForwardBuild {
  NodeId f_ind_pre, f_gro_pre, f_glo, f_gro, f_ind;
  int guarded = 0;
};

ForwardBuild build_forward(Tape& t, const std::vector<NodeId>& patch_tokens,
                           const std::vector<std::vector<int>>& groups, const UbeNodes& patch,
                           const UbeNodes& ind, const UbeNodes& group, GumbelDraws& noise) {
  ForwardBuild fb;
  const std::vector<int> assignment = group_assignment(patch_tokens.size(), groups);

  // Bottom-up: patches -> individual tokens -> group tokens -> global token.
  std::vector<NodeId> ind_rows;
  ind_rows.reserve(patch_tokens.size());
  for (NodeId tokens : patch_tokens)
    ind_rows.push_back(build_ube_bottom_up(t, tokens, patch, noise, &fb.guarded));
  fb.f_ind_pre = t.vstack(ind_rows);

  std::vector<NodeId> gro_rows;
  gro_rows.reserve(groups.size());
  for (const auto& members : groups) {
    const NodeId member_tokens = t.gather_rows(fb.f_ind_pre, members);
    gro_rows.push_back(build_ube_bottom_up(t, member_tokens, ind, noise, &fb.guarded));
  }
  fb.f_gro_pre = t.vstack(gro_rows);

  fb.f_glo = build_ube_bottom_up(t, fb.f_gro_pre, group, noise, &fb.guarded);

  // Top-down: the global token refines each group token, which in turn
  // refines the tokens of its members.
  std::vector<NodeId> refined_groups;
  refined_groups.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    refined_groups.push_back(
        build_cme_top_down(t, t.rows(fb.f_gro_pre, static_cast<int>(g), 1), fb.f_glo, group)
            .pooled);
  fb.f_gro = t.vstack(refined_groups);

  std::vector<NodeId> refined_inds;
  refined_inds.reserve(patch_tokens.size());
  for (std::size_t q = 0; q < patch_tokens.size(); ++q)
    refined_inds.push_back(
        build_cme_top_down(t, t.rows(fb.f_ind_pre, static_cast<int>(q), 1),
                           t.rows(fb.f_gro, assignment[q], 1), ind)
            .pooled);
  fb.f_ind = t.vstack(refined_inds);
  return fb;
}

struct HeadNodes {
  NodeId w_ind, b_ind, w_grp, b_grp, w_glo, b_glo, w_aff;
};

HeadNodes register_heads(Tape& t, const HeadWeights& h, bool track) {
  const auto reg = [&](const Eigen::MatrixXd& m) { return track ? t.leaf(m) : t.constant(m); };
  return HeadNodes{reg(h.w_ind), reg(h.b_ind), reg(h.w_grp), reg(h.b_grp),
                   reg(h.w_glo), reg(h.b_glo), reg(h.w_aff)};
}

struct LogitNodes {
  NodeId individual, group, global, affinity;
};

LogitNodes build_heads(Tape& t, const ForwardBuild& fb, const HeadNodes& h, int d) {
  LogitNodes out;
  out.individual = t.add_row_broadcast(t.matmul(fb.f_ind, h.w_ind), h.b_ind);
  out.group = t.add_row_broadcast(t.matmul(fb.f_gro, h.w_grp), h.b_grp);
  out.global = t.add_row_broadcast(t.matmul(fb.f_glo, h.w_glo), h.b_glo);
  const NodeId proj = t.matmul(fb.f_ind, h.w_aff);
  out.affinity = t.scale(t.matmul(proj, t.transpose(proj)), 1.0 / std::sqrt(double(d)));
  return out;
}

}  // namespace

UmeAttentionResult ume_self_attention(const TokenMatrix& x, const UbeWeights& w) {
  Tape t;
  const UbeNodes u = register_ube(t, w, Mat::Zero(1, w.cls.cols()), false);
  const UmeBuild b = build_ume_self_attention(t, t.constant(x.rows), u);
  UmeAttentionResult r;
  r.cls_out = t.value(b.cls_out);
  r.hidden = t.value(b.hidden);
  for (NodeId a : b.attention) r.attention.push_back(t.value(a));
  return r;
}

PrototypeAttentionResult prototype_attention(const TokenMatrix& x, const PrototypeBank& bank,
                                             const UbeWeights& w, const GumbelConfig& gumbel) {
  Tape t;
  const UbeNodes u = register_ube(t, w, bank.prototypes, false);
  GumbelDraws noise(gumbel);
  const auto gamma = noise.next(static_cast<int>(bank.prototypes.rows()));
  const ProtoBuild b = build_prototype_attention(t, t.constant(x.rows), u,
                                                 gamma ? &*gamma : nullptr);
  PrototypeAttentionResult r;
  r.pooled = t.value(b.pooled);
  r.similarity = t.value(b.similarity);
  r.updated = t.value(b.updated);
  r.guarded = b.guarded;
  return r;
}

Eigen::MatrixXd ube_bottom_up(const TokenMatrix& x, const PrototypeBank& bank,
                              const UbeWeights& w, const GumbelConfig& gumbel) {
  Tape t;
  const UbeNodes u = register_ube(t, w, bank.prototypes, false);
  GumbelDraws noise(gumbel);
  return t.value(build_ube_bottom_up(t, t.constant(x.rows), u, noise, nullptr));
}

CmeResult cme_top_down(const TokenMatrix& x_low, const Eigen::MatrixXd& o_high,
                       const UbeWeights& w) {
  if (o_high.rows() != 1 || o_high.cols() != x_low.dim())
    throw ValidationError("higher-level feature must be 1 x d");
  Tape t;
  const UbeNodes u = register_ube(t, w, Mat::Zero(1, w.cls.cols()), false);
  const CmeBuild b = build_cme_top_down(t, t.constant(x_low.rows), t.constant(o_high), u);
  CmeResult r;
  r.pooled = t.value(b.pooled);
  for (NodeId a : b.attention) r.attention.push_back(t.value(a));
  return r;
}

BppFeatures forward_bipropagate(const std::vector<PatchEmbedding>& patches,
                                const std::vector<GroupProposal>& groups,
                                const ModelWeights& weights, const GumbelConfig& gumbel) {
  if (patches.empty()) throw ValidationError("forward pass needs at least one individual");
  if (groups.empty()) throw ValidationError("forward pass needs at least one group");
  for (const auto& p : patches) check_dim(p.tokens, weights.dims.d, "patch embedding");

  Tape t;
  const UbeNodes patch = register_ube(t, weights.patch, weights.bank_patch.prototypes, false);
  const UbeNodes ind =
      register_ube(t, weights.individual, weights.bank_individual.prototypes, false);
  const UbeNodes group = register_ube(t, weights.group, weights.bank_group.prototypes, false);

  std::vector<NodeId> tokens;
  tokens.reserve(patches.size());
  for (const auto& p : patches) tokens.push_back(t.constant(p.tokens));
  std::vector<std::vector<int>> members;
  members.reserve(groups.size());
  for (const auto& g : groups) members.push_back(g.member_indices);

  GumbelDraws noise(gumbel);
  const ForwardBuild fb = build_forward(t, tokens, members, patch, ind, group, noise);

  BppFeatures f;
  f.f_ind_pre = t.value(fb.f_ind_pre);
  f.f_gro_pre = t.value(fb.f_gro_pre);
  f.f_glo = t.value(fb.f_glo);
  f.f_gro = t.value(fb.f_gro);
  f.f_ind = t.value(fb.f_ind);
  f.guarded = fb.guarded;
  return f;
}

RecognitionLogits recognition_heads(const BppFeatures& features, const ModelWeights& weights) {
  Tape t;
  const HeadNodes h = register_heads(t, weights.heads, false);
  ForwardBuild fb;
  fb.f_ind = t.constant(features.f_ind);
  fb.f_gro = t.constant(features.f_gro);
  fb.f_glo = t.constant(features.f_glo);
  const LogitNodes logits = build_heads(t, fb, h, weights.dims.d);
  RecognitionLogits out;
  out.individual = t.value(logits.individual);
  out.group = t.value(logits.group);
  out.global = t.value(logits.global);
  out.affinity = t.value(logits.affinity);
  return out;
}

RecognitionLoss recognition_loss(const RecognitionLogits& logits,
                                 const RecognitionLabels& labels) {
  const auto same_shape = [](const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
  };
  if (!same_shape(logits.individual, labels.individual) ||
      !same_shape(logits.group, labels.group) || !same_shape(logits.global, labels.global) ||
      !same_shape(logits.affinity, labels.same_group))
    throw ValidationError("recognition logits and labels have mismatched shapes");

  Tape t;
  RecognitionLoss loss;
  loss.l_i = t.scalar(t.bce_with_logits_mean(t.constant(logits.individual), labels.individual));
  loss.l_s = t.scalar(t.bce_with_logits_mean(t.constant(logits.group), labels.group));
  loss.l_g = t.scalar(t.bce_with_logits_mean(t.constant(logits.global), labels.global));
  loss.l_d = t.scalar(t.bce_with_logits_mean(t.constant(logits.affinity), labels.same_group));
  return loss;
}

namespace {

// Greedy one-to-one assignment of predictions to ground truth by descending
// IoU. Returns pairs (pred index, gt index, iou); zero-IoU pairs never match.
struct DetMatch {
  int pred, gt;
  double overlap;
};

std::vector<DetMatch> greedy_iou_assignment(const std::vector<Box>& pred,
                                            const std::vector<Box>& gt) {
  std::vector<DetMatch> candidates;
  for (int i = 0; i < static_cast<int>(pred.size()); ++i)
    for (int j = 0; j < static_cast<int>(gt.size()); ++j) {
      const double v = iou(pred[i], gt[j]);
      if (v > 0.0) candidates.push_back({i, j, v});
    }
  std::sort(candidates.begin(), candidates.end(), [](const DetMatch& a, const DetMatch& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });
  std::vector<bool> pred_used(pred.size(), false), gt_used(gt.size(), false);
  std::vector<DetMatch> matches;
  for (const DetMatch& c : candidates) {
    if (pred_used[c.pred] || gt_used[c.gt]) continue;
    pred_used[c.pred] = true;
    gt_used[c.gt] = true;
    matches.push_back(c);
  }
  return matches;
}

struct DetBuild {
  NodeId total;  // 1x1 node for lambda_reg*l_reg + l_obj + l_cls
  double l_reg = 0;
  NodeId l_obj, l_cls;
};

DetBuild build_detection_loss(Tape& t, const std::vector<Box>& pred_boxes, NodeId logits,
                              const std::vector<Box>& gt, double lambda_reg) {
  DetBuild b;
  const auto matches = greedy_iou_assignment(pred_boxes, gt);
  if (!matches.empty()) {
    for (const DetMatch& m : matches) b.l_reg += 1.0 - m.overlap;
    b.l_reg /= static_cast<double>(matches.size());
  }

  if (!pred_boxes.empty()) {
    Mat obj_targets = Mat::Zero(static_cast<Eigen::Index>(pred_boxes.size()), 1);
    for (const DetMatch& m : matches) obj_targets(m.pred, 0) = 1.0;
    b.l_obj = t.bce_with_logits_mean(t.cols(logits, 0, 1), obj_targets);
  } else {
    b.l_obj = t.constant_scalar(0.0);
  }

  if (!matches.empty()) {
    std::vector<int> matched;
    for (const DetMatch& m : matches) matched.push_back(m.pred);
    std::sort(matched.begin(), matched.end());
    b.l_cls = t.bce_with_logits_mean(
        t.gather_rows(t.cols(logits, 1, 1), matched),
        Mat::Ones(static_cast<Eigen::Index>(matched.size()), 1));
  } else {
    b.l_cls = t.constant_scalar(0.0);
  }

  b.total = t.add(t.add(t.constant_scalar(lambda_reg * b.l_reg), b.l_obj), b.l_cls);
  return b;
}

}  // namespace

DetectionLoss detection_loss(const std::vector<PredictedBox>& pred, const std::vector<Box>& gt,
                             double lambda_reg) {
  for (const auto& p : pred) validate_box(p.box);
  for (const auto& g : gt) validate_box(g);
  std::vector<Box> boxes;
  Mat logits(static_cast<Eigen::Index>(pred.size()), 2);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    boxes.push_back(pred[i].box);
    logits(static_cast<Eigen::Index>(i), 0) = pred[i].objectness_logit;
    logits(static_cast<Eigen::Index>(i), 1) = pred[i].class_logit;
  }
  Tape t;
  const DetBuild b = build_detection_loss(t, boxes, t.constant(logits), gt, lambda_reg);
  DetectionLoss out;
  out.l_reg = b.l_reg;
  out.l_obj = t.scalar(b.l_obj);
  out.l_cls = t.scalar(b.l_cls);
  out.lambda_reg = lambda_reg;
  return out;
}

double total_loss(double l_rec, double l_det, double lambda) { return l_rec + lambda * l_det; }

LossReport evaluate_scene(const ModelWeights& weights, const SceneSample& scene,
                          std::map<std::string, Eigen::MatrixXd>* grads,
                          BppFeatures* features_out) {
  if (scene.patch_tokens.empty()) throw ValidationError("scene has no individuals");
  if (scene.det_logits.rows() != static_cast<Eigen::Index>(scene.det_boxes.size()) ||
      (scene.det_logits.size() > 0 && scene.det_logits.cols() != 2))
    throw ValidationError("det_logits must be n_pred x 2");

  const bool track = grads != nullptr;
  Tape t;
  std::map<std::string, NodeId> param_ids;
  for_each_param(weights, [&](const std::string& name, const Eigen::MatrixXd& m) {
    param_ids[name] = track ? t.leaf(m) : t.constant(m);
  });
  const auto wire_ube = [&](const char* prefix, const UbeWeights& w, const char* bank) {
    const std::string p = std::string("ube.") + prefix + ".";
    UbeNodes n;
    n.cls = param_ids.at(p + "cls");
    n.pos = param_ids.at(p + "pos");
    n.msa_wq = param_ids.at(p + "msa.wq");
    n.msa_wk = param_ids.at(p + "msa.wk");
    n.msa_wv = param_ids.at(p + "msa.wv");
    n.msa_wo = param_ids.at(p + "msa.wo");
    n.mlp_w1 = param_ids.at(p + "mlp.w1");
    n.mlp_b1 = param_ids.at(p + "mlp.b1");
    n.mlp_w2 = param_ids.at(p + "mlp.w2");
    n.mlp_b2 = param_ids.at(p + "mlp.b2");
    n.proto_wq = param_ids.at(p + "proto.wq");
    n.proto_wk = param_ids.at(p + "proto.wk");
    n.proto_wv = param_ids.at(p + "proto.wv");
    n.proto_wo = param_ids.at(p + "proto.wo");
    n.mca_wq = param_ids.at(p + "mca.wq");
    n.mca_wk = param_ids.at(p + "mca.wk");
    n.mca_wv = param_ids.at(p + "mca.wv");
    n.mca_wo = param_ids.at(p + "mca.wo");
    n.bank = param_ids.at(std::string("bank.") + bank);
    n.heads = w.heads;
    return n;
  };
  const UbeNodes patch = wire_ube("patch", weights.patch, "patch");
  const UbeNodes ind = wire_ube("ind", weights.individual, "ind");
  const UbeNodes group = wire_ube("group", weights.group, "group");
  const HeadNodes heads{param_ids.at("head.ind.w"),    param_ids.at("head.ind.b"),
                        param_ids.at("head.group.w"),  param_ids.at("head.group.b"),
                        param_ids.at("head.global.w"), param_ids.at("head.global.b"),
                        param_ids.at("head.affinity.w")};

  std::vector<NodeId> tokens;
  for (const auto& p : scene.patch_tokens) {
    check_dim(p, weights.dims.d, "patch tokens");
    tokens.push_back(t.constant(p));
  }

  GumbelDraws noise(scene.gumbel);
  const ForwardBuild fb = build_forward(t, tokens, scene.group_members, patch, ind, group, noise);
  const LogitNodes logits = build_heads(t, fb, heads, weights.dims.d);

  const NodeId l_i = t.bce_with_logits_mean(logits.individual, scene.labels.individual);
  const NodeId l_s = t.bce_with_logits_mean(logits.group, scene.labels.group);
  const NodeId l_g = t.bce_with_logits_mean(logits.global, scene.labels.global);
  const NodeId l_d = t.bce_with_logits_mean(logits.affinity, scene.labels.same_group);
  const NodeId l_rec = t.add(t.add(l_i, l_s), t.add(l_g, l_d));

  const NodeId det_logits = track ? t.leaf(scene.det_logits) : t.constant(scene.det_logits);
  const DetBuild det = build_detection_loss(t, scene.det_boxes, det_logits, scene.det_gt,
                                            scene.lambda_reg);
  const NodeId total = t.add(l_rec, t.scale(det.total, scene.lambda));

  LossReport report;
  report.rec.l_i = t.scalar(l_i);
  report.rec.l_s = t.scalar(l_s);
  report.rec.l_g = t.scalar(l_g);
  report.rec.l_d = t.scalar(l_d);
  report.det.l_reg = det.l_reg;
  report.det.l_obj = t.scalar(det.l_obj);
  report.det.l_cls = t.scalar(det.l_cls);
  report.det.lambda_reg = scene.lambda_reg;
  report.lambda = scene.lambda;
  report.total = t.scalar(total);

  if (features_out) {
    features_out->f_ind_pre = t.value(fb.f_ind_pre);
    features_out->f_gro_pre = t.value(fb.f_gro_pre);
    features_out->f_glo = t.value(fb.f_glo);
    features_out->f_gro = t.value(fb.f_gro);
    features_out->f_ind = t.value(fb.f_ind);
    features_out->guarded = fb.guarded;
  }

  if (track) {
    t.backward(total);
    for (const auto& [name, id] : param_ids) (*grads)[name] = t.grad(id);
    (*grads)["det.logits"] = t.grad(det_logits);
  }
  return report;
}

double gradient_check(const std::function<double()>& loss, Eigen::MatrixXd& param,
                      const Eigen::MatrixXd& analytic, double epsilon) {
  // [1e-7, 1e-3] is the supported precision window; larger steps run anyway
  // and simply report the expected truncation degradation.
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw ValidationError("gradient check epsilon must be positive and finite");
  if (analytic.rows() != param.rows() || analytic.cols() != param.cols())
    throw ValidationError("analytic gradient shape does not match the parameter");

  const double base1 = loss();
  const double base2 = loss();
  if (base1 != base2)
    throw ValidationError("loss closure is not deterministic (two evaluations disagree)");

  double max_rel = 0.0;
  for (Eigen::Index r = 0; r < param.rows(); ++r) {
    for (Eigen::Index c = 0; c < param.cols(); ++c) {
      const double saved = param(r, c);
      param(r, c) = saved + epsilon;
      const double up = loss();
      param(r, c) = saved - epsilon;
      const double down = loss();
      param(r, c) = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic(r, c);
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

std::vector<GradCheckRow> gradient_check_model(const ModelWeights& weights,
                                               const SceneSample& scene, double epsilon) {
  ModelWeights w = weights;
  SceneSample s = scene;
  std::map<std::string, Eigen::MatrixXd> grads;
  evaluate_scene(w, s, &grads);

  const auto loss = [&]() { return evaluate_scene(w, s).total; };

  std::vector<GradCheckRow> rows;
  for_each_param(w, [&](const std::string& name, Eigen::MatrixXd& m) {
    rows.push_back({name, m.rows(), m.cols(), gradient_check(loss, m, grads.at(name), epsilon)});
  });
  if (s.det_logits.size() > 0)
    rows.push_back({"det.logits", s.det_logits.rows(), s.det_logits.cols(),
                    gradient_check(loss, s.det_logits, grads.at("det.logits"), epsilon)});
  return rows;
}

SceneSample make_synthetic_scene(const ModelDims& dims, int individuals, int groups,
                                 int patch_tokens, std::uint64_t seed) {
  if (individuals < 1 || groups < 1 || groups > individuals || patch_tokens < 1)
    throw ValidationError("scene needs at least one individual/group/token");
  SceneSample s;
  SeededRng rng(seed);

  // Token magnitudes climb per individual so features stay separated through
  // the residual-heavy encoder; at a random checkpoint near-identical inputs
  // collapse the value spread and starve the prototype projections of
  // gradient signal.
  for (int q = 0; q < individuals; ++q) {
    Mat tokens(patch_tokens, dims.d);
    for (Eigen::Index r = 0; r < tokens.rows(); ++r)
      for (Eigen::Index c = 0; c < tokens.cols(); ++c)
        tokens(r, c) = rng.gaussian() * (1.0 + q);
    s.patch_tokens.push_back(std::move(tokens));
  }

  s.group_members.resize(groups);
  for (int q = 0; q < individuals; ++q) s.group_members[q % groups].push_back(q);

  const auto random_labels = [&](Eigen::Index rows, int classes) {
    Mat m = Mat::Zero(rows, classes);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int c = 0; c < classes; ++c) m(r, c) = rng.uniform() < 0.25 ? 1.0 : 0.0;
      if (m.row(r).sum() == 0.0) m(r, rng.uniform_int(0, classes - 1)) = 1.0;
    }
    return m;
  };
  s.labels.individual = random_labels(individuals, dims.individual_classes);
  s.labels.group = random_labels(groups, dims.group_classes);
  s.labels.global = random_labels(1, dims.global_classes);
  s.labels.same_group = Mat::Zero(individuals, individuals);
  const std::vector<int> assignment = group_assignment(individuals, s.group_members);
  for (int a = 0; a < individuals; ++a)
    for (int b = 0; b < individuals; ++b)
      s.labels.same_group(a, b) = assignment[a] == assignment[b] ? 1.0 : 0.0;

  // A small detection sample: jittered copies of the ground truth plus one
  // stray false positive.
  for (int i = 0; i < individuals; ++i) {
    Box gt{40.0 * i + rng.uniform(0, 10), rng.uniform(0, 10), rng.uniform(8, 20),
           rng.uniform(16, 40)};
    s.det_gt.push_back(gt);
    Box pred = gt;
    pred.x += rng.uniform(-2, 2);
    pred.y += rng.uniform(-2, 2);
    s.det_boxes.push_back(pred);
  }
  s.det_boxes.push_back(Box{500.0, 200.0, 10.0, 10.0});
  s.det_logits.resize(static_cast<Eigen::Index>(s.det_boxes.size()), 2);
  for (Eigen::Index r = 0; r < s.det_logits.rows(); ++r)
    for (Eigen::Index c = 0; c < 2; ++c) s.det_logits(r, c) = rng.gaussian();
  return s;
}

}  // namespace panofocus

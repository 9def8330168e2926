#include "panofocus/evaluation.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "panofocus/errors.hpp"

namespace panofocus {

double f_score(double p, double r) {
  if (p + r <= 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

namespace {

struct Candidate {
  int pred, gt;
  double overlap;
  double pred_score;
  const Box* pred_box;
  const Box* gt_box;
};

std::vector<MatchPair> greedy_match(std::vector<Candidate> candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    if (a.pred_score != b.pred_score) return a.pred_score > b.pred_score;
    if (a.pred_box && b.pred_box && !(*a.pred_box == *b.pred_box))
      return lex_less(*a.pred_box, *b.pred_box);
    if (a.gt_box && b.gt_box && !(*a.gt_box == *b.gt_box)) return lex_less(*a.gt_box, *b.gt_box);
    if (a.pred != b.pred) return a.pred < b.pred;
    return a.gt < b.gt;
  });
  std::set<int> pred_used, gt_used;
  std::vector<MatchPair> out;
  for (const Candidate& c : candidates) {
    if (pred_used.count(c.pred) || gt_used.count(c.gt)) continue;
    pred_used.insert(c.pred);
    gt_used.insert(c.gt);
    out.push_back({c.pred, c.gt, c.overlap});
  }
  return out;
}

// Sorted-set intersection size; label lists are validated sorted-unique on load.
std::size_t overlap_count(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> inter;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  return inter.size();
}

Prf label_set_scores(const std::vector<std::vector<int>>& pred_labels,
                     const std::vector<std::vector<int>>& gt_labels,
                     const std::vector<MatchPair>& matching) {
  // Nothing predicted and nothing annotated is vacuously perfect; this keeps
  // the identity round trip at exactly 1.0 on frames with an empty level.
  if (pred_labels.empty() && gt_labels.empty()) return Prf{1.0, 1.0, 1.0};
  double p_sum = 0.0, r_sum = 0.0;
  for (const MatchPair& m : matching) {
    const auto& pl = pred_labels[m.pred];
    const auto& gl = gt_labels[m.gt];
    const double inter = static_cast<double>(overlap_count(pl, gl));
    if (!pl.empty()) p_sum += inter / static_cast<double>(pl.size());
    if (!gl.empty()) r_sum += inter / static_cast<double>(gl.size());
  }
  Prf out;
  out.p = pred_labels.empty() ? 0.0 : p_sum / static_cast<double>(pred_labels.size());
  out.r = gt_labels.empty() ? 0.0 : r_sum / static_cast<double>(gt_labels.size());
  out.f = f_score(out.p, out.r);
  return out;
}

}  // namespace

std::vector<MatchPair> match_individuals(const std::vector<PredictedIndividual>& pred,
                                         const std::vector<AnnotatedIndividual>& gt,
                                         double iou_thresh) {
  std::vector<Candidate> candidates;
  for (int i = 0; i < static_cast<int>(pred.size()); ++i) {
    for (int j = 0; j < static_cast<int>(gt.size()); ++j) {
      const double v = iou(pred[i].box, gt[j].box);
      if (v > iou_thresh)
        candidates.push_back({i, j, v, pred[i].score, &pred[i].box, &gt[j].box});
    }
  }
  return greedy_match(std::move(candidates));
}

Prf score_individual(const std::vector<PredictedIndividual>& pred,
                     const std::vector<AnnotatedIndividual>& gt,
                     const std::vector<MatchPair>& matching) {
  std::vector<std::vector<int>> pl, gl;
  for (const auto& x : pred) pl.push_back(x.actions);
  for (const auto& x : gt) gl.push_back(x.actions);
  return label_set_scores(pl, gl, matching);
}

std::vector<MatchPair> match_groups(const std::vector<PredictedGroup>& pred,
                                    const std::vector<AnnotatedGroup>& gt,
                                    const std::vector<PredictedIndividual>& pred_individuals,
                                    const std::vector<AnnotatedIndividual>& gt_individuals,
                                    const std::vector<MatchPair>& individual_matching,
                                    double member_iou_thresh) {
  // Predicted member index -> matched GT identity.
  std::map<int, std::string> matched_identity;
  for (const MatchPair& m : individual_matching)
    matched_identity[m.pred] = gt_individuals[m.gt].id;

  std::vector<Candidate> candidates;
  for (int i = 0; i < static_cast<int>(pred.size()); ++i) {
    for (int m : pred[i].members)
      if (m < 0 || m >= static_cast<int>(pred_individuals.size()))
        throw ValidationError("predicted group member index out of range");
    for (int j = 0; j < static_cast<int>(gt.size()); ++j) {
      const std::set<std::string> gt_members(gt[j].members.begin(), gt[j].members.end());
      std::size_t inter = 0;
      for (int m : pred[i].members) {
        const auto it = matched_identity.find(m);
        if (it != matched_identity.end() && gt_members.count(it->second)) ++inter;
      }
      const std::size_t uni = pred[i].members.size() + gt_members.size() - inter;
      const double v = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      if (v > member_iou_thresh) candidates.push_back({i, j, v, 0.0, nullptr, nullptr});
    }
  }
  return greedy_match(std::move(candidates));
}

Prf score_group(const std::vector<PredictedGroup>& pred, const std::vector<AnnotatedGroup>& gt,
                const std::vector<MatchPair>& matching) {
  std::vector<std::vector<int>> pl, gl;
  for (const auto& x : pred) pl.push_back(x.activities);
  for (const auto& x : gt) gl.push_back(x.activities);
  return label_set_scores(pl, gl, matching);
}

Prf score_global(const std::vector<int>& pred_labels, const std::vector<int>& gt_labels) {
  if (pred_labels.empty() && gt_labels.empty()) return Prf{1.0, 1.0, 1.0};
  const double inter = static_cast<double>(overlap_count(pred_labels, gt_labels));
  Prf out;
  out.p = pred_labels.empty() ? 0.0 : inter / static_cast<double>(pred_labels.size());
  out.r = gt_labels.empty() ? 0.0 : inter / static_cast<double>(gt_labels.size());
  out.f = f_score(out.p, out.r);
  return out;
}

double overall(double f_i, double f_p, double f_g) { return (f_i + f_p + f_g) / 3.0; }

FrameScores score_frame(const FramePrediction& pred, const FrameAnnotation& gt,
                        double iou_thresh) {
  FrameScores s;
  s.frame_id = gt.frame_id;
  const auto ind_matching = match_individuals(pred.individuals, gt.individuals, iou_thresh);
  s.individual = score_individual(pred.individuals, gt.individuals, ind_matching);
  const auto grp_matching = match_groups(pred.groups, gt.groups, pred.individuals,
                                         gt.individuals, ind_matching, iou_thresh);
  s.group = score_group(pred.groups, gt.groups, grp_matching);
  s.global = score_global(pred.global_labels, gt.global_labels);
  return s;
}

EvalReport evaluate_frames(const std::vector<FramePrediction>& preds,
                           const std::vector<FrameAnnotation>& gts, double iou_thresh) {
  if (preds.size() != gts.size())
    throw ValidationError("prediction and annotation frame counts differ");
  EvalReport report;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (preds[i].frame_id != gts[i].frame_id)
      throw InternalError("frame order mismatch in evaluation");
    report.frames.push_back(score_frame(preds[i], gts[i], iou_thresh));
  }
  const double n = static_cast<double>(report.frames.size());
  if (n > 0) {
    for (const FrameScores& s : report.frames) {
      report.individual.p += s.individual.p;
      report.individual.r += s.individual.r;
      report.group.p += s.group.p;
      report.group.r += s.group.r;
      report.global.p += s.global.p;
      report.global.r += s.global.r;
    }
    for (Prf* prf : {&report.individual, &report.group, &report.global}) {
      prf->p /= n;
      prf->r /= n;
    }
  }
  report.individual.f = f_score(report.individual.p, report.individual.r);
  report.group.f = f_score(report.group.p, report.group.r);
  report.global.f = f_score(report.global.p, report.global.r);
  report.f_a = overall(report.individual.f, report.group.f, report.global.f);
  return report;
}

std::string report_to_text(const EvalReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  const auto row = [&os](const char* name, const Prf& s) {
    os << name << "  P=" << s.p << "  R=" << s.r << "  F=" << s.f << "\n";
  };
  row("individual", report.individual);
  row("group     ", report.group);
  row("global    ", report.global);
  os << "overall     F_a=" << report.f_a << "  (" << report.frames.size() << " frames, "
     << report.averaging << ")\n";
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["p_i"] = report.individual.p;
  j["r_i"] = report.individual.r;
  j["f_i"] = report.individual.f;
  j["p_p"] = report.group.p;
  j["r_p"] = report.group.r;
  j["f_p"] = report.group.f;
  j["p_g"] = report.global.p;
  j["r_g"] = report.global.r;
  j["f_g"] = report.global.f;
  j["f_a"] = report.f_a;
  j["averaging"] = report.averaging;
  j["frames"] = nlohmann::json::array();
  for (const FrameScores& s : report.frames) {
    nlohmann::json f;
    f["frame_id"] = s.frame_id;
    f["p_i"] = s.individual.p;
    f["r_i"] = s.individual.r;
    f["f_i"] = s.individual.f;
    f["p_p"] = s.group.p;
    f["r_p"] = s.group.r;
    f["f_p"] = s.group.f;
    f["p_g"] = s.global.p;
    f["r_g"] = s.global.r;
    f["f_g"] = s.global.f;
    j["frames"].push_back(f);
  }
  return j.dump(2) + "\n";
}

}  // namespace panofocus

#pragma once

#include <string>
#include <vector>

#include "panofocus/geometry.hpp"

namespace panofocus {

// Ground truth for one frame.
struct AnnotatedIndividual {
  std::string id;
  Box box;
  std::vector<int> actions;  // multi-hot action label indices, sorted unique
};

struct AnnotatedGroup {
  std::vector<std::string> members;  // identities from the individuals list
  std::vector<int> activities;
};

struct FrameAnnotation {
  std::string frame_id;
  std::string image_path;
  std::vector<AnnotatedIndividual> individuals;
  std::vector<AnnotatedGroup> groups;
  std::vector<int> global_labels;
};

// Pipeline output for one frame.
struct PredictedIndividual {
  Box box;
  double score = 0;
  std::vector<int> actions;
};

struct PredictedGroup {
  std::vector<int> members;  // indices into the frame's predicted individuals
  std::vector<int> activities;
};

struct FramePrediction {
  std::string frame_id;
  std::vector<PredictedIndividual> individuals;
  std::vector<PredictedGroup> groups;
  std::vector<int> global_labels;
};

struct MatchPair {
  int pred = -1;
  int gt = -1;
  double overlap = 0;  // box IoU for individuals, member-set IoU for groups
};

// Greedy one-to-one matching in descending IoU order; pairs at or below
// iou_thresh are excluded. Ties break on higher prediction score, then
// lexicographic box order.
std::vector<MatchPair> match_individuals(const std::vector<PredictedIndividual>& pred,
                                         const std::vector<AnnotatedIndividual>& gt,
                                         double iou_thresh);

struct Prf {
  double p = 0, r = 0, f = 0;
};

double f_score(double p, double r);

// Set-overlap scoring of action labels over matched pairs, normalized by the
// prediction and ground-truth counts respectively. A level that is empty on
// both sides scores 1.0 (vacuously perfect); empty on one side scores 0.
Prf score_individual(const std::vector<PredictedIndividual>& pred,
                     const std::vector<AnnotatedIndividual>& gt,
                     const std::vector<MatchPair>& matching);

// Member-set IoU matching: predicted members map to GT identities through the
// individual matching; members with no match count only in the union.
std::vector<MatchPair> match_groups(const std::vector<PredictedGroup>& pred,
                                    const std::vector<AnnotatedGroup>& gt,
                                    const std::vector<PredictedIndividual>& pred_individuals,
                                    const std::vector<AnnotatedIndividual>& gt_individuals,
                                    const std::vector<MatchPair>& individual_matching,
                                    double member_iou_thresh);

Prf score_group(const std::vector<PredictedGroup>& pred, const std::vector<AnnotatedGroup>& gt,
                const std::vector<MatchPair>& matching);

Prf score_global(const std::vector<int>& pred_labels, const std::vector<int>& gt_labels);

double overall(double f_i, double f_p, double f_g);

struct FrameScores {
  std::string frame_id;
  Prf individual, group, global;
};

FrameScores score_frame(const FramePrediction& pred, const FrameAnnotation& gt,
                        double iou_thresh);

struct EvalReport {
  Prf individual, group, global;  // P,R averaged over frames; F from those means
  double f_a = 0;
  std::vector<FrameScores> frames;
  // Frames are scored independently and averaged uniformly; recorded here so
  // consumers can tell which pooling convention produced the numbers.
  std::string averaging = "per-frame-mean";
};

// Scores every (prediction, annotation) pair and averages over frames.
EvalReport evaluate_frames(const std::vector<FramePrediction>& preds,
                           const std::vector<FrameAnnotation>& gts, double iou_thresh);

std::string report_to_text(const EvalReport& report);
std::string report_to_json(const EvalReport& report);

}  // namespace panofocus

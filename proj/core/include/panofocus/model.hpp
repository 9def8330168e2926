#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace panofocus {

enum class Level { Patch, Individual, Group, Global };

const char* level_name(Level level);

// Feature tokens at one granularity, one token per row.
struct TokenMatrix {
  Eigen::MatrixXd rows;
  Level level = Level::Patch;

  Eigen::Index count() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

// Learnable prototype vectors for one encoding block, one per row.
struct PrototypeBank {
  Eigen::MatrixXd prototypes;  // J x d
  Level level = Level::Patch;
};

struct ModelDims {
  int d = 8;
  int heads = 4;
  int prototypes = 4;  // J per level
  int m_max = 256;     // positional table covers m_max tokens plus the CLS slot
  int individual_classes = 27;
  int group_classes = 11;
  int global_classes = 7;

  int mlp_hidden() const { return 4 * d; }
  void validate() const;
};

struct AttnWeights {
  Eigen::MatrixXd wq, wk, wv, wo;  // each d x d, heads are column blocks
};

struct MlpWeights {
  Eigen::MatrixXd w1, b1, w2, b2;  // d x 4d, 1 x 4d, 4d x d, 1 x d
};

// All learnable state of one encoding block: the CLS token, positional table,
// self-attention + MLP for the bottom-up path, the prototype projections, and
// cross-attention for the top-down path. The single MLP is shared by both
// paths (their token shapes agree).
struct UbeWeights {
  Eigen::MatrixXd cls;         // 1 x d
  Eigen::MatrixXd positional;  // (m_max + 1) x d
  AttnWeights msa;
  MlpWeights mlp;
  AttnWeights proto;  // wq projects prototypes, wk/wv project tokens, wo the pooled update
  AttnWeights mca;
  int heads = 4;
};

struct HeadWeights {
  Eigen::MatrixXd w_ind, b_ind;  // d x 27, 1 x 27
  Eigen::MatrixXd w_grp, b_grp;  // d x 11, 1 x 11
  Eigen::MatrixXd w_glo, b_glo;  // d x 7,  1 x 7
  Eigen::MatrixXd w_aff;         // d x d, pairwise membership-affinity projection
};

// Three blocks named by the granularity of their input tokens, the three
// prototype banks, and the classifier heads.
struct ModelWeights {
  ModelDims dims;
  UbeWeights patch, individual, group;
  PrototypeBank bank_patch, bank_individual, bank_group;
  HeadWeights heads;

  const UbeWeights& block(Level input_level) const;
  const PrototypeBank& bank(Level input_level) const;
};

// All matrices drawn from N(0, stddev^2), deterministic in the seed. The
// 0.02 default is the production scale; verification harnesses pass a larger
// stddev so finite differences stay well conditioned.
ModelWeights init_model(const ModelDims& dims, std::uint64_t seed, double stddev = 0.02);

// Zero-filled weights with the right shapes (test scaffolding).
ModelWeights zero_model(const ModelDims& dims);

// Visits every learnable matrix with a stable dotted name, in a fixed order.
void for_each_param(ModelWeights& w,
                    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn);
void for_each_param(const ModelWeights& w,
                    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn);

// Pointer to the named matrix, or null when no such parameter exists.
Eigen::MatrixXd* find_param(ModelWeights& w, const std::string& name);

}  // namespace panofocus

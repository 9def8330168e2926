#include "panofocus/model.hpp"

#include "panofocus/errors.hpp"
#include "panofocus/rng.hpp"

namespace panofocus {

const char* level_name(Level level) {
  switch (level) {
    case Level::Patch: return "patch";
    case Level::Individual: return "ind";
    case Level::Group: return "group";
    case Level::Global: return "global";
  }
  return "?";
}

void ModelDims::validate() const {
  if (d < 1) throw ValidationError("model dim 'd' must be >= 1");
  if (heads < 1 || d % heads != 0) throw ValidationError("'heads' must divide 'd'");
  if (prototypes < 1) throw ValidationError("'prototypes' must be >= 1");
  if (m_max < 1) throw ValidationError("'m_max' must be >= 1");
  if (individual_classes < 1 || group_classes < 1 || global_classes < 1)
    throw ValidationError("class counts must be >= 1");
}

const UbeWeights& ModelWeights::block(Level input_level) const {
  switch (input_level) {
    case Level::Patch: return patch;
    case Level::Individual: return individual;
    case Level::Group: return group;
    default: throw InternalError("no encoding block takes global-level input");
  }
}

const PrototypeBank& ModelWeights::bank(Level input_level) const {
  switch (input_level) {
    case Level::Patch: return bank_patch;
    case Level::Individual: return bank_individual;
    case Level::Group: return bank_group;
    default: throw InternalError("no prototype bank at global level");
  }
}

namespace {

using Mat = Eigen::MatrixXd;

void shape_ube(UbeWeights& u, const ModelDims& dims) {
  const int d = dims.d;
  u.cls = Mat::Zero(1, d);
  u.positional = Mat::Zero(dims.m_max + 1, d);
  for (Mat* m : {&u.msa.wq, &u.msa.wk, &u.msa.wv, &u.msa.wo, &u.proto.wq, &u.proto.wk,
                 &u.proto.wv, &u.proto.wo, &u.mca.wq, &u.mca.wk, &u.mca.wv, &u.mca.wo})
    *m = Mat::Zero(d, d);
  u.mlp.w1 = Mat::Zero(d, dims.mlp_hidden());
  u.mlp.b1 = Mat::Zero(1, dims.mlp_hidden());
  u.mlp.w2 = Mat::Zero(dims.mlp_hidden(), d);
  u.mlp.b2 = Mat::Zero(1, d);
  u.heads = dims.heads;
}

}  // namespace

ModelWeights zero_model(const ModelDims& dims) {
  dims.validate();
  ModelWeights w;
  w.dims = dims;
  shape_ube(w.patch, dims);
  shape_ube(w.individual, dims);
  shape_ube(w.group, dims);
  w.bank_patch = {Mat::Zero(dims.prototypes, dims.d), Level::Patch};
  w.bank_individual = {Mat::Zero(dims.prototypes, dims.d), Level::Individual};
  w.bank_group = {Mat::Zero(dims.prototypes, dims.d), Level::Group};
  w.heads.w_ind = Mat::Zero(dims.d, dims.individual_classes);
  w.heads.b_ind = Mat::Zero(1, dims.individual_classes);
  w.heads.w_grp = Mat::Zero(dims.d, dims.group_classes);
  w.heads.b_grp = Mat::Zero(1, dims.group_classes);
  w.heads.w_glo = Mat::Zero(dims.d, dims.global_classes);
  w.heads.b_glo = Mat::Zero(1, dims.global_classes);
  w.heads.w_aff = Mat::Zero(dims.d, dims.d);
  return w;
}

ModelWeights init_model(const ModelDims& dims, std::uint64_t seed, double stddev) {
  ModelWeights w = zero_model(dims);
  SeededRng rng(seed);
  for_each_param(w, [&](const std::string&, Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.gaussian(0.0, stddev);
  });
  return w;
}

namespace {

template <typename Weights, typename Fn>
void visit_params(Weights& w, const Fn& fn) {
  const auto visit_ube = [&](const char* name, auto& u) {
    const std::string p = std::string("ube.") + name + ".";
    fn(p + "cls", u.cls);
    fn(p + "pos", u.positional);
    fn(p + "msa.wq", u.msa.wq);
    fn(p + "msa.wk", u.msa.wk);
    fn(p + "msa.wv", u.msa.wv);
    fn(p + "msa.wo", u.msa.wo);
    fn(p + "mlp.w1", u.mlp.w1);
    fn(p + "mlp.b1", u.mlp.b1);
    fn(p + "mlp.w2", u.mlp.w2);
    fn(p + "mlp.b2", u.mlp.b2);
    fn(p + "proto.wq", u.proto.wq);
    fn(p + "proto.wk", u.proto.wk);
    fn(p + "proto.wv", u.proto.wv);
    fn(p + "proto.wo", u.proto.wo);
    fn(p + "mca.wq", u.mca.wq);
    fn(p + "mca.wk", u.mca.wk);
    fn(p + "mca.wv", u.mca.wv);
    fn(p + "mca.wo", u.mca.wo);
  };
  visit_ube("patch", w.patch);
  visit_ube("ind", w.individual);
  visit_ube("group", w.group);
  fn("bank.patch", w.bank_patch.prototypes);
  fn("bank.ind", w.bank_individual.prototypes);
  fn("bank.group", w.bank_group.prototypes);
  fn("head.ind.w", w.heads.w_ind);
  fn("head.ind.b", w.heads.b_ind);
  fn("head.group.w", w.heads.w_grp);
  fn("head.group.b", w.heads.b_grp);
  fn("head.global.w", w.heads.w_glo);
  fn("head.global.b", w.heads.b_glo);
  fn("head.affinity.w", w.heads.w_aff);
}

}  // namespace

void for_each_param(ModelWeights& w,
                    const std::function<void(const std::string&, Eigen::MatrixXd&)>& fn) {
  visit_params(w, fn);
}

void for_each_param(const ModelWeights& w,
                    const std::function<void(const std::string&, const Eigen::MatrixXd&)>& fn) {
  visit_params(w, fn);
}

Eigen::MatrixXd* find_param(ModelWeights& w, const std::string& name) {
  Eigen::MatrixXd* found = nullptr;
  for_each_param(w, [&](const std::string& n, Eigen::MatrixXd& m) {
    if (n == name) found = &m;
  });
  return found;
}

}  // namespace panofocus

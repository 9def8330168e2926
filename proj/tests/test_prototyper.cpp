#include <doctest.h>

#include <Eigen/Core>

#include "panofocus/errors.hpp"
#include "panofocus/prototyper.hpp"
#include "panofocus/rng.hpp"

using namespace panofocus;
using Mat = Eigen::MatrixXd;

namespace {

constexpr std::uint64_t kSeed = 5150;

ModelDims small_dims() {
  ModelDims d;
  d.d = 8;
  d.heads = 4;
  d.prototypes = 4;
  d.m_max = 16;
  return d;
}

Mat random_tokens(int m, int d, std::uint64_t seed) {
  SeededRng rng(seed);
  Mat x(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.gaussian();
  return x;
}

double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

std::vector<PatchEmbedding> scene_patches(int q, int tokens, int d, std::uint64_t seed) {
  std::vector<PatchEmbedding> patches;
  for (int i = 0; i < q; ++i)
    patches.push_back({random_tokens(tokens, d, seed + i), 16, i});
  return patches;
}

std::vector<GroupProposal> two_groups() {
  return {{{0, 1}, Box{0, 0, 10, 10}}, {{2}, Box{20, 0, 10, 10}}};
}

}  // namespace

TEST_CASE("MSA attention rows sum to one") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const TokenMatrix x{random_tokens(5, dims.d, 1), Level::Patch};
  const UmeAttentionResult r = ume_self_attention(x, w.patch);
  REQUIRE(r.attention.size() == 4);
  for (const Mat& head : r.attention) {
    REQUIRE(head.rows() == 6);  // M + CLS
    for (Eigen::Index i = 0; i < head.rows(); ++i)
      CHECK(head.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(r.cls_out.rows() == 1);
  CHECK(r.cls_out.cols() == dims.d);
  CHECK(r.hidden.rows() == 6);
}

TEST_CASE("zero weights propagate zero through the CLS path") {
  const ModelDims dims = small_dims();
  const ModelWeights w = zero_model(dims);
  const TokenMatrix x{Mat::Zero(1, dims.d), Level::Patch};
  const UmeAttentionResult r = ume_self_attention(x, w.patch);
  CHECK(r.cls_out.isZero(0.0));
}

TEST_CASE("ume_self_attention is deterministic and bounded by the positional table") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const TokenMatrix x{random_tokens(4, dims.d, 2), Level::Patch};
  const UmeAttentionResult a = ume_self_attention(x, w.patch);
  const UmeAttentionResult b = ume_self_attention(x, w.patch);
  CHECK(max_abs_diff(a.hidden, b.hidden) == 0.0);

  const TokenMatrix too_many{random_tokens(dims.m_max + 1, dims.d, 3), Level::Patch};
  CHECK_THROWS_AS(ume_self_attention(too_many, w.patch), ValidationError);
}

TEST_CASE("residual identity when output projections are zeroed") {
  const ModelDims dims = small_dims();
  ModelWeights w = init_model(dims, kSeed, 0.3);
  w.patch.msa.wo.setZero();
  w.patch.mlp.w2.setZero();
  w.patch.mlp.b2.setZero();
  const Mat x = random_tokens(5, dims.d, 4);
  const UmeAttentionResult r = ume_self_attention({x, Level::Patch}, w.patch);

  Mat z(6, dims.d);
  z.row(0) = w.patch.cls.row(0);
  z.bottomRows(5) = x;
  z += w.patch.positional.topRows(6);
  CHECK(max_abs_diff(r.hidden, z) == 0.0);  // exact identity path
}

TEST_CASE("prototype attention rows are distributions; J=1 is degenerate") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const TokenMatrix x{random_tokens(6, dims.d, 5), Level::Patch};
  const PrototypeAttentionResult r = prototype_attention(x, w.bank_patch, w.patch);
  REQUIRE(r.similarity.rows() == 6);
  REQUIRE(r.similarity.cols() == 4);
  for (Eigen::Index i = 0; i < 6; ++i)
    CHECK(r.similarity.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));

  ModelDims one = dims;
  one.prototypes = 1;
  const ModelWeights w1 = init_model(one, kSeed, 0.3);
  const PrototypeAttentionResult r1 = prototype_attention(x, w1.bank_patch, w1.patch);
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(r1.similarity(i, 0) == 1.0);
}

TEST_CASE("identical prototypes with noise disabled attend uniformly") {
  const ModelDims dims = small_dims();
  ModelWeights w = init_model(dims, kSeed, 0.3);
  PrototypeBank bank = w.bank_patch;
  for (Eigen::Index j = 1; j < bank.prototypes.rows(); ++j)
    bank.prototypes.row(j) = bank.prototypes.row(0);
  const TokenMatrix x{random_tokens(5, dims.d, 6), Level::Patch};
  const PrototypeAttentionResult r = prototype_attention(x, bank, w.patch);
  for (Eigen::Index i = 0; i < r.similarity.rows(); ++i)
    for (Eigen::Index j = 0; j < r.similarity.cols(); ++j)
      CHECK(r.similarity(i, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("a starved prototype keeps its value under the guard") {
  ModelDims dims = small_dims();
  dims.prototypes = 2;
  ModelWeights w = zero_model(dims);
  // one token whose key matches prototype 0 strongly and prototype 1 at -inf
  w.patch.proto.wq.setIdentity();
  w.patch.proto.wk.setIdentity();
  w.patch.proto.wv.setIdentity();
  w.patch.proto.wo.setIdentity();
  w.bank_patch.prototypes.setZero();
  w.bank_patch.prototypes(0, 0) = 2000.0;
  w.bank_patch.prototypes(1, 0) = -2000.0;
  Mat x = Mat::Zero(1, dims.d);
  x(0, 0) = 1.0;
  const PrototypeAttentionResult r = prototype_attention({x, Level::Patch}, w.bank_patch, w.patch);
  CHECK(r.guarded == 1);
  CHECK(r.similarity(0, 0) == 1.0);
  // the starved prototype row is returned unchanged
  CHECK(max_abs_diff(r.updated.row(1), w.bank_patch.prototypes.row(1)) == 0.0);
}

TEST_CASE("bottom-up output is the exact sum of its two paths") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const TokenMatrix x{random_tokens(5, dims.d, 7), Level::Patch};
  const Mat combined = ube_bottom_up(x, w.bank_patch, w.patch);
  const Mat cls = ume_self_attention(x, w.patch).cls_out;
  const Mat pooled = prototype_attention(x, w.bank_patch, w.patch).pooled;
  CHECK(max_abs_diff(combined, cls + pooled) == 0.0);
  CHECK(combined.rows() == 1);
  CHECK(combined.cols() == dims.d);
}

TEST_CASE("prototype pooling is permutation invariant") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  Mat x = random_tokens(6, dims.d, 8);
  const Mat pooled = prototype_attention({x, Level::Patch}, w.bank_patch, w.patch).pooled;
  Mat shuffled(6, dims.d);
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  for (int i = 0; i < 6; ++i) shuffled.row(i) = x.row(perm[i]);
  const Mat pooled2 =
      prototype_attention({shuffled, Level::Patch}, w.bank_patch, w.patch).pooled;
  CHECK(max_abs_diff(pooled, pooled2) < 1e-6);
}

TEST_CASE("cross-attention onto a single key weights it fully") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const TokenMatrix low{random_tokens(4, dims.d, 9), Level::Group};
  const Mat high = random_tokens(1, dims.d, 10);
  const CmeResult r = cme_top_down(low, high, w.group);
  REQUIRE(r.attention.size() == 4);
  for (const Mat& head : r.attention) {
    REQUIRE(head.cols() == 1);
    for (Eigen::Index i = 0; i < head.rows(); ++i) CHECK(head(i, 0) == 1.0);
  }
  CHECK(r.pooled.rows() == 1);
  CHECK(r.pooled.cols() == dims.d);
}

TEST_CASE("cme with zero MLP reduces to the token mean of the residual") {
  const ModelDims dims = small_dims();
  ModelWeights w = init_model(dims, kSeed, 0.3);
  w.group.mlp.w1.setZero();
  w.group.mlp.b1.setZero();
  w.group.mlp.w2.setZero();
  w.group.mlp.b2.setZero();
  const Mat x = random_tokens(4, dims.d, 11);
  const Mat high = random_tokens(1, dims.d, 12);
  const CmeResult r = cme_top_down({x, Level::Group}, high, w.group);

  // with a single key every query attends to it fully, so the MCA output is
  // (high * Wv per head, concatenated) * Wo for every row
  Mat v = high * w.group.mca.wv;
  Mat attended = (v * w.group.mca.wo).replicate(4, 1);
  Mat expected = (attended + x).colwise().mean();
  CHECK(max_abs_diff(r.pooled, expected) < 1e-12);
}

TEST_CASE("forward_bipropagate shape contract and minimal instance") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const BppFeatures f = forward_bipropagate(scene_patches(3, 4, dims.d, 100), two_groups(), w);
  CHECK(f.f_ind.rows() == 3);
  CHECK(f.f_ind.cols() == dims.d);
  CHECK(f.f_gro.rows() == 2);
  CHECK(f.f_glo.rows() == 1);
  CHECK(f.f_ind.allFinite());
  CHECK(f.f_gro.allFinite());
  CHECK(f.f_glo.allFinite());

  const BppFeatures single = forward_bipropagate(scene_patches(1, 2, dims.d, 200),
                                                 {{{0}, Box{0, 0, 5, 5}}}, w);
  CHECK(single.f_ind.rows() == 1);
  CHECK(single.f_glo.allFinite());
}

TEST_CASE("forward_bipropagate rejects broken partitions") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const auto patches = scene_patches(3, 4, dims.d, 300);
  CHECK_THROWS_AS(forward_bipropagate(patches, {{{0, 1}, Box{}}}, w), ValidationError);
  CHECK_THROWS_AS(forward_bipropagate(patches, {{{0, 1}, Box{}}, {{1, 2}, Box{}}, }, w),
                  ValidationError);
  CHECK_THROWS_AS(forward_bipropagate({}, two_groups(), w), ValidationError);
}

TEST_CASE("global feature ignores member order when positions are zeroed") {
  const ModelDims dims = small_dims();
  ModelWeights w = init_model(dims, kSeed, 0.3);
  w.individual.positional.setZero();  // the level whose tokens get permuted
  auto patches = scene_patches(3, 4, dims.d, 400);
  const std::vector<GroupProposal> groups{{{0, 1, 2}, Box{0, 0, 10, 10}}};
  const Mat base = forward_bipropagate(patches, groups, w).f_glo;

  std::swap(patches[0], patches[2]);  // permute individuals inside the group
  const Mat permuted = forward_bipropagate(patches, groups, w).f_glo;
  CHECK(max_abs_diff(base, permuted) < 1e-9);
}

TEST_CASE("seeded gumbel noise is reproducible and vanishes with amplitude") {
  const ModelDims dims = small_dims();
  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const auto patches = scene_patches(3, 4, dims.d, 500);
  const auto groups = two_groups();

  const Mat base = forward_bipropagate(patches, groups, w).f_glo;

  GumbelConfig noisy{true, 99, 1.0};
  const Mat a = forward_bipropagate(patches, groups, w, noisy).f_glo;
  const Mat b = forward_bipropagate(patches, groups, w, noisy).f_glo;
  CHECK(max_abs_diff(a, b) == 0.0);  // same seed, same draws
  CHECK(max_abs_diff(a, base) > 0.0);

  // continuity toward the disabled limit, tolerance proportional to amplitude
  for (double amplitude : {1e-3, 1e-6}) {
    GumbelConfig faint{true, 99, amplitude};
    const Mat out = forward_bipropagate(patches, groups, w, faint).f_glo;
    CHECK(max_abs_diff(out, base) <= 100.0 * amplitude);
  }
}

TEST_CASE("recognition heads: zero weights give even odds; shapes hold") {
  const ModelDims dims = small_dims();
  const ModelWeights zero = zero_model(dims);
  BppFeatures f;
  f.f_ind = random_tokens(3, dims.d, 600);
  f.f_gro = random_tokens(2, dims.d, 601);
  f.f_glo = random_tokens(1, dims.d, 602);
  const RecognitionLogits logits = recognition_heads(f, zero);
  CHECK(logits.individual.rows() == 3);
  CHECK(logits.individual.cols() == 27);
  CHECK(logits.group.rows() == 2);
  CHECK(logits.group.cols() == 11);
  CHECK(logits.global.rows() == 1);
  CHECK(logits.global.cols() == 7);
  CHECK(logits.affinity.rows() == 3);
  CHECK(logits.affinity.cols() == 3);
  CHECK(logits.individual.isZero(0.0));  // sigmoid(0) = 0.5 everywhere

  const ModelWeights w = init_model(dims, kSeed, 0.3);
  const RecognitionLogits l1 = recognition_heads(f, w);
  const RecognitionLogits l2 = recognition_heads(f, w);
  CHECK(max_abs_diff(l1.affinity, l2.affinity) == 0.0);
}

#include <benchmark/benchmark.h>

#include "panofocus/prototyper.hpp"
#include "panofocus/rng.hpp"

using namespace panofocus;

namespace {

ModelDims dims_for(int d) {
  ModelDims dims;
  dims.d = d;
  dims.heads = 4;
  dims.prototypes = 4;
  dims.m_max = 64;
  return dims;
}

std::vector<PatchEmbedding> patches_for(int q, int tokens, int d) {
  SeededRng rng(9);
  std::vector<PatchEmbedding> out;
  for (int i = 0; i < q; ++i) {
    Eigen::MatrixXd m(tokens, d);
    for (int r = 0; r < tokens; ++r)
      for (int c = 0; c < d; ++c) m(r, c) = rng.gaussian();
    out.push_back({m, 16, i});
  }
  return out;
}

std::vector<GroupProposal> round_robin_groups(int q, int l) {
  std::vector<GroupProposal> groups(l);
  for (int i = 0; i < q; ++i) groups[i % l].member_indices.push_back(i);
  for (auto& g : groups) g.bounds = Box{0, 0, 10, 10};
  return groups;
}

}  // namespace

static void BM_ForwardBipropagate(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const int q = static_cast<int>(state.range(1));
  const ModelDims dims = dims_for(d);
  const ModelWeights weights = init_model(dims, 7, 0.1);
  const auto patches = patches_for(q, 16, d);
  const auto groups = round_robin_groups(q, std::max(1, q / 3));
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_bipropagate(patches, groups, weights));
  }
}
BENCHMARK(BM_ForwardBipropagate)->Args({8, 3})->Args({8, 12})->Args({32, 12});

static void BM_SceneLossWithGradients(benchmark::State& state) {
  const ModelDims dims = dims_for(static_cast<int>(state.range(0)));
  const ModelWeights weights = init_model(dims, 7, 0.1);
  const SceneSample scene = make_synthetic_scene(dims, 3, 2, 4, 8);
  std::map<std::string, Eigen::MatrixXd> grads;
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_scene(weights, scene, &grads));
  }
}
BENCHMARK(BM_SceneLossWithGradients)->Arg(8)->Arg(16);

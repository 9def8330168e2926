#include <benchmark/benchmark.h>

#include "panofocus/focuser.hpp"
#include "panofocus/rng.hpp"

using namespace panofocus;

namespace {

std::vector<Box> crowd(int n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Box> boxes;
  boxes.reserve(n);
  for (int i = 0; i < n; ++i) {
    Box b{rng.uniform(0, 3600), rng.uniform(0, 400), rng.uniform(4, 120), rng.uniform(8, 80)};
    b.score = rng.uniform();
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace

static void BM_AdaptiveResize(benchmark::State& state) {
  const auto boxes = crowd(static_cast<int>(state.range(0)), 1);
  const FocuserConfig cfg;
  const FrameSpec frame{3760, 480};
  for (auto _ : state) {
    for (const Box& b : boxes) benchmark::DoNotOptimize(adaptive_resize(b, cfg, frame));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AdaptiveResize)->Arg(50)->Arg(200);

static void BM_DenseRegionMerge(benchmark::State& state) {
  const auto boxes = crowd(static_cast<int>(state.range(0)), 2);
  const FocuserConfig cfg;
  const FrameSpec frame{3760, 480};
  std::vector<Box> extended;
  for (const Box& b : boxes) extended.push_back(adaptive_resize(b, cfg, frame));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dense_region_merge(extended));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenseRegionMerge)->Arg(50)->Arg(200)->Arg(800);

static void BM_FuseDetections(benchmark::State& state) {
  const auto original = crowd(static_cast<int>(state.range(0)), 3);
  const auto fine = crowd(static_cast<int>(state.range(0)) / 2, 4);
  const FocuserConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fuse_detections(original, fine, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FuseDetections)->Arg(50)->Arg(200)->Arg(800);

#include <doctest.h>

#include "panofocus/errors.hpp"
#include "panofocus/featurizer.hpp"
#include "panofocus/rng.hpp"

using namespace panofocus;

namespace {

Image noise_image(int w, int h, int channels, std::uint64_t seed) {
  Image img = make_image(w, h, channels);
  SeededRng rng(seed);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

}  // namespace

TEST_CASE("embed_individual shape arithmetic") {
  const Image crop = noise_image(32, 32, 3, 1);
  const PatchEmbedding e = embed_individual(crop, 16, 8, 42);
  CHECK(e.tokens.rows() == 4);
  CHECK(e.tokens.cols() == 8);
  CHECK(e.tokens.allFinite());

  // 20x35 resizes to the nearest multiples of 16: 16x32 -> 1x2 patches
  const PatchEmbedding odd = embed_individual(noise_image(20, 35, 3, 2), 16, 8, 42);
  CHECK(odd.tokens.rows() == 2);
}

TEST_CASE("embed_individual is deterministic in crop, P, d and seed") {
  const Image crop = noise_image(48, 24, 3, 3);
  const PatchEmbedding a = embed_individual(crop, 8, 6, 7);
  const PatchEmbedding b = embed_individual(crop, 8, 6, 7);
  CHECK((a.tokens - b.tokens).cwiseAbs().maxCoeff() == 0.0);  // bitwise identical
  const PatchEmbedding other_seed = embed_individual(crop, 8, 6, 8);
  CHECK((a.tokens - other_seed.tokens).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("embed_individual maps a zero crop to zero tokens") {
  const Image zeros = make_image(32, 32, 3, 0);
  const PatchEmbedding e = embed_individual(zeros, 16, 8, 42);
  CHECK(e.tokens.isZero(0.0));
}

TEST_CASE("embed_individual rejects degenerate inputs") {
  CHECK_THROWS_AS(embed_individual(Image{}, 16, 8, 1), ValidationError);
  CHECK_THROWS_AS(embed_individual(noise_image(8, 8, 3, 1), 0, 8, 1), ValidationError);
  CHECK_THROWS_AS(embed_individual(noise_image(8, 8, 3, 1), 4, 0, 1), ValidationError);
}

TEST_CASE("propose_groups on worked examples") {
  const std::vector<Box> close{{0, 0, 10, 10}, {5, 0, 10, 10}};
  const auto one = propose_groups(close, 50.0);
  REQUIRE(one.size() == 1);
  CHECK(one[0].member_indices == std::vector<int>{0, 1});

  const std::vector<Box> far{{0, 0, 10, 10}, {500, 0, 10, 10}};
  CHECK(propose_groups(far, 50.0).size() == 2);

  const auto single = propose_groups({Box{3, 3, 5, 5}}, 50.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0].member_indices == std::vector<int>{0});
  CHECK(single[0].bounds == Box{3, 3, 5, 5});
}

TEST_CASE("propose_groups partitions the input and bounds cover members") {
  SeededRng rng(33);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<Box> boxes;
    const int n = rng.uniform_int(1, 30);
    for (int i = 0; i < n; ++i)
      boxes.push_back({rng.uniform(0, 800), rng.uniform(0, 200), rng.uniform(2, 40),
                       rng.uniform(2, 40)});
    const auto groups = propose_groups(boxes, 60.0);
    std::vector<bool> seen(boxes.size(), false);
    for (const GroupProposal& g : groups) {
      CHECK(!g.member_indices.empty());
      for (int m : g.member_indices) {
        CHECK(!seen[static_cast<std::size_t>(m)]);
        seen[static_cast<std::size_t>(m)] = true;
        CHECK(contains(g.bounds, Box{boxes[m].x, boxes[m].y, boxes[m].w, boxes[m].h}));
      }
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("propose_groups is transitive through chains") {
  // a-b close, b-c close, a-c far: single linkage joins all three
  const std::vector<Box> chain{{0, 0, 10, 10}, {40, 0, 10, 10}, {80, 0, 10, 10}};
  const auto groups = propose_groups(chain, 45.0);
  REQUIRE(groups.size() == 1);
  CHECK(groups[0].member_indices.size() == 3);
}

#include "panofocus/featurizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "panofocus/errors.hpp"
#include "panofocus/rng.hpp"

namespace panofocus {

namespace {

int nearest_multiple(int value, int step) {
  const int rounded = static_cast<int>(std::lround(static_cast<double>(value) / step)) * step;
  return std::max(step, rounded);
}

}  // namespace

PatchEmbedding embed_individual(const Image& crop, int patch_size, int d, std::uint64_t seed,
                                int individual_index) {
  if (crop.empty()) throw ValidationError("cannot embed an empty crop");
  if (patch_size < 1) throw ValidationError("patch size must be >= 1");
  if (d < 1) throw ValidationError("embedding dimension must be >= 1");

  const int w = nearest_multiple(crop.width, patch_size);
  const int h = nearest_multiple(crop.height, patch_size);
  const Image resized = resize_image(crop, w, h);

  const int cols = w / patch_size;
  const int rows = h / patch_size;
  const int flat = patch_size * patch_size * resized.channels;

  // Fixed random projection, regenerated from the seed on every call so the
  // embedding depends only on (crop bytes, patch_size, d, seed).
  SeededRng rng(seed);
  Eigen::MatrixXd projection(flat, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(flat));
  for (int r = 0; r < flat; ++r)
    for (int c = 0; c < d; ++c) projection(r, c) = rng.gaussian() * scale;

  PatchEmbedding out;
  out.patch_size = patch_size;
  out.individual_index = individual_index;
  out.tokens.resize(rows * cols, d);
  Eigen::RowVectorXd patch(flat);
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc) {
      int k = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int c = 0; c < resized.channels; ++c)
            patch(k++) =
                resized.at(pc * patch_size + x, pr * patch_size + y, c) / 255.0;
      out.tokens.row(pr * cols + pc) = patch * projection;
    }
  }
  return out;
}

std::vector<GroupProposal> propose_groups(const std::vector<Box>& individuals,
                                          double distance_threshold) {
  if (individuals.empty()) throw ValidationError("cannot propose groups for zero individuals");

  const int n = static_cast<int>(individuals.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };

  for (int i = 0; i < n; ++i) {
    const auto [xi, yi] = individuals[i].center();
    for (int j = i + 1; j < n; ++j) {
      const auto [xj, yj] = individuals[j].center();
      if (std::hypot(xi - xj, yi - yj) < distance_threshold) {
        parent[find(i)] = find(j);
      }
    }
  }

  // Components keyed by their smallest member so output order is stable.
  std::vector<GroupProposal> groups;
  std::vector<int> group_of(n, -1);
  for (int i = 0; i < n; ++i) {
    const int root = find(i);
    if (group_of[root] < 0) {
      group_of[root] = static_cast<int>(groups.size());
      groups.push_back({});
    }
    GroupProposal& g = groups[group_of[root]];
    g.member_indices.push_back(i);
    Box stripped{individuals[i].x, individuals[i].y, individuals[i].w, individuals[i].h};
    g.bounds = g.member_indices.size() == 1 ? stripped : union_box(g.bounds, stripped);
  }
  return groups;
}

}  // namespace panofocus

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "panofocus/geometry.hpp"
#include "panofocus/image.hpp"

namespace panofocus {

// Patch tokens for one individual crop, N x d. The projection replacing the
// pretrained video encoder is a seeded random Gaussian matrix, so token
// semantics are meaningless but shapes, determinism and gradients are real.
struct PatchEmbedding {
  Eigen::MatrixXd tokens;
  int patch_size = 0;
  int individual_index = 0;
};

// Splits the crop into non-overlapping patch_size x patch_size patches (after
// resizing each side to the nearest positive multiple of patch_size) and
// projects each flattened patch to d dims. Deterministic in
// (crop bytes, patch_size, d, seed).
PatchEmbedding embed_individual(const Image& crop, int patch_size, int d, std::uint64_t seed,
                                int individual_index = 0);

struct GroupProposal {
  std::vector<int> member_indices;  // ascending indices into the individual list
  Box bounds;                       // union of member boxes
};

// Single-linkage clustering on box centers: groups are connected components
// of the graph linking centers strictly closer than distance_threshold.
// Groups come out ordered by their smallest member index.
std::vector<GroupProposal> propose_groups(const std::vector<Box>& individuals,
                                          double distance_threshold);

}  // namespace panofocus

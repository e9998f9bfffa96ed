#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "maskprop/volume.hpp"

namespace maskprop {

// Deterministic synthetic "muscle-like" stack: star-convex blobs whose
// cross-sections drift and deform smoothly with depth, under speckle noise.
struct PhantomSpec {
  std::uint64_t seed = 0;
  int depth = 80;
  int height = 64;
  int width = 64;
  int n_structures = 1;
  Spacing spacing{1.0, 1.0, 1.0};
  double noise_level = 0.3;        // >= 0; scales multiplicative speckle
  double deform_smoothness = 1.0;  // > 0; larger means slower per-slice change

  void validate() const;
};

struct Phantom {
  Volume volume;
  std::vector<MaskVolume> masks;  // one per structure, pairwise disjoint
};

Phantom generate_phantom(const PhantomSpec& spec);

// Patient-wise split by position: first part train, then val, then test.
// Uses largest-remainder apportionment; errors if any nonzero ratio gets an
// empty part.
std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n,
                                                      const std::array<double, 3>& ratios);

std::array<std::vector<PhantomSpec>, 3> split_dataset(const std::vector<PhantomSpec>& specs,
                                                      const std::array<double, 3>& ratios);

}  // namespace maskprop

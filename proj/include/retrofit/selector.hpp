#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "retrofit/dense_map.hpp"
#include "retrofit/sparse_tensor.hpp"

namespace retrofit {

enum class SelectionPolicy : std::uint8_t { kEntropyThreshold, kTopFraction, kRandom, kEdge };

std::string_view to_string(SelectionPolicy policy);

/// Refinement pixel set at full resolution.
///
/// `coords` is sorted lexicographically and unique. Core entries were picked
/// by the policy; halo entries are context-only neighbours of core pixels.
struct PixelSelection {
  int height = 0;
  int width = 0;
  std::vector<Coord> coords;
  std::vector<std::uint8_t> is_core;
  SelectionPolicy policy = SelectionPolicy::kEntropyThreshold;
  std::optional<double> alpha_used;

  std::size_t size() const { return coords.size(); }
  bool empty() const { return coords.empty(); }
  std::size_t core_count() const;
  std::size_t halo_count() const { return size() - core_count(); }
  std::vector<Coord> core_coords() const;
};

// Core set {p : entropy(p) > alpha}; alpha must lie in [0, 1].
PixelSelection select_entropy(const DenseMap& entropy, double alpha);

/// Exactly round(fraction * H * W) highest-scoring pixels.
///
/// Ties are broken by lexicographic coordinate, so the result is a pure
/// function of the score map. `policy` only labels the selection.
PixelSelection select_top_fraction(const DenseMap& score, double fraction,
                                   SelectionPolicy policy = SelectionPolicy::kTopFraction);

// Uniform [0, 1) draws per pixel from a 64-bit Mersenne twister. The bits to
// double conversion is explicit so the map is identical on every platform.
DenseMap random_score_map(int height, int width, std::uint64_t seed);

// Sobel gradient magnitude of 0.299R + 0.587G + 0.114B, replicated borders.
DenseMap edge_score_map(const DenseMap& rgb);

PixelSelection select_random(int height, int width, double fraction, std::uint64_t seed);
PixelSelection select_edge(const DenseMap& rgb, double fraction);

// Adds every in-bounds pixel within Chebyshev distance `radius` of a core
// pixel as halo. Core flags are never changed.
PixelSelection dilate_halo(const PixelSelection& sel, int radius);

// Per-site features [rgb(3) | coarse(C) | entropy(1)], one row per selected
// pixel in selection order, stride 1.
SparseTensor assemble_sparse_input(const PixelSelection& sel, const DenseMap& rgb,
                                   const DenseMap& coarse, const DenseMap& entropy);

// Fraction of the top `fraction` pixels of `error` that also appear among the
// top `fraction` pixels of `score` (both via select_top_fraction).
double top_fraction_recall(const DenseMap& score, const DenseMap& error, double fraction);

}  // namespace retrofit

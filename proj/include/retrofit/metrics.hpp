#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retrofit/dense_map.hpp"

namespace retrofit {

using Point3 = std::array<double, 3>;

// Depth metrics fill the first three fields, pointmap metrics the next
// three; absent fields are not serialized.
struct MetricReport {
  std::optional<double> abs_rel;
  std::optional<double> rmse;
  std::optional<double> delta_half;
  std::optional<double> accuracy;
  std::optional<double> completeness;
  std::optional<double> overall;
  std::size_t valid_count = 0;

  // `metric=value` lines, fixed key order, 17 significant digits.
  std::string to_text() const;
  static MetricReport from_text(const std::string& text);
};

// Threshold for the delta_half ratio criterion: 1.25^0.5.
double delta_half_threshold();

/// AbsRel, RMSE and delta_half over valid pixels.
///
/// Throws EmptyEvaluation when no pixel is valid and InvalidInput when a
/// valid ground-truth value is not strictly positive.
MetricReport depth_metrics(const DenseMap& pred, const DenseMap& gt, const ValidityMask& mask);

// Root mean squared error summed over channels, valid pixels only. Works for
// any matching channel count (depth or pointmap).
double geometry_rmse(const DenseMap& pred, const DenseMap& gt, const ValidityMask& mask);

enum class NearestSearch { kBruteForce, kGrid };

/// Mean nearest-neighbour distances between two point sets.
///
/// accuracy: predicted -> ground truth; completeness: ground truth ->
/// predicted; overall: their mean. Both search methods return bit-identical
/// reports.
MetricReport pointmap_metrics(std::span<const Point3> pred, std::span<const Point3> gt,
                              NearestSearch search = NearestSearch::kGrid);

// Distance from every query to its nearest reference point.
std::vector<double> nearest_distances(std::span<const Point3> queries,
                                      std::span<const Point3> reference,
                                      NearestSearch search);

// One point per valid pixel of a pointmap, raster order.
std::vector<Point3> points_from_map(const DenseMap& pointmap, const ValidityMask& mask);

}  // namespace retrofit

#include "retrofit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

double point_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

std::vector<double> brute_force_nearest(std::span<const Point3> queries,
                                        std::span<const Point3> reference) {
  std::vector<double> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point3& r : reference) best = std::min(best, point_distance(queries[i], r));
    out[i] = best;
  }
  return out;
}

// Sparse uniform grid over the reference points; cells hashed by packed index.
class PointGrid {
 public:
  explicit PointGrid(std::span<const Point3> points) : points_(points) {
    for (int k = 0; k < 3; ++k) {
      lo_[k] = std::numeric_limits<double>::infinity();
      double hi = -std::numeric_limits<double>::infinity();
      for (const Point3& p : points) {
        lo_[k] = std::min(lo_[k], p[k]);
        hi = std::max(hi, p[k]);
      }
      extent_ = std::max(extent_, hi - lo_[k]);
    }
    const double per_axis = std::ceil(std::sqrt(static_cast<double>(points.size())));
    cell_ = extent_ > 0.0 ? extent_ / per_axis : 1.0;
    for (int k = 0; k < 3; ++k) {
      max_idx_[k] = 0;
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto idx = cell_of(points[i]);
      for (int k = 0; k < 3; ++k) max_idx_[k] = std::max(max_idx_[k], idx[k]);
      cells_[pack(idx)].push_back(static_cast<int>(i));
    }
  }

  double nearest(const Point3& q) const {
    auto center = cell_of(q);
    for (int k = 0; k < 3; ++k) center[k] = std::clamp(center[k], 0, max_idx_[k]);
    int max_ring = 0;
    for (int k = 0; k < 3; ++k) {
      max_ring = std::max({max_ring, center[k], max_idx_[k] - center[k]});
    }
    double best = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring <= max_ring; ++ring) {
      for (int dz = -ring; dz <= ring; ++dz) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            const std::array<int, 3> idx{center[0] + dx, center[1] + dy, center[2] + dz};
            if (idx[0] < 0 || idx[1] < 0 || idx[2] < 0) continue;
            if (idx[0] > max_idx_[0] || idx[1] > max_idx_[1] || idx[2] > max_idx_[2]) continue;
            const auto it = cells_.find(pack(idx));
            if (it == cells_.end()) continue;
            for (int i : it->second) {
              best = std::min(best, point_distance(q, points_[static_cast<std::size_t>(i)]));
            }
          }
        }
      }
      // Unvisited cells are at least `ring` whole cells away.
      if (best <= ring * cell_) break;
    }
    return best;
  }

 private:
  std::array<int, 3> cell_of(const Point3& p) const {
    std::array<int, 3> idx{};
    for (int k = 0; k < 3; ++k) {
      const double f = std::floor((p[k] - lo_[k]) / cell_);
      idx[k] = static_cast<int>(std::clamp(f, -1.0e6, 1.0e6));
    }
    return idx;
  }
  static std::uint64_t pack(const std::array<int, 3>& idx) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(idx[0]) & 0x1FFFFF) << 42) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(idx[1]) & 0x1FFFFF) << 21) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(idx[2]) & 0x1FFFFF));
  }

  std::span<const Point3> points_;
  std::array<double, 3> lo_{};
  double extent_ = 0.0;
  double cell_ = 1.0;
  std::array<int, 3> max_idx_{};
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

void append_line(std::string& out, const char* key, const std::optional<double>& v) {
  if (!v) return;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, *v);
  out += buf;
}

}  // namespace

double delta_half_threshold() { return std::sqrt(1.25); }

std::string MetricReport::to_text() const {
  std::string out;
  append_line(out, "abs_rel", abs_rel);
  append_line(out, "rmse", rmse);
  append_line(out, "delta_half", delta_half);
  append_line(out, "accuracy", accuracy);
  append_line(out, "completeness", completeness);
  append_line(out, "overall", overall);
  out += "valid_count=" + std::to_string(valid_count) + "\n";
  return out;
}

MetricReport MetricReport::from_text(const std::string& text) {
  MetricReport report;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "valid_count") {
      report.valid_count = static_cast<std::size_t>(std::stoull(value));
      continue;
    }
    const double v = std::stod(value);
    if (key == "abs_rel") report.abs_rel = v;
    else if (key == "rmse") report.rmse = v;
    else if (key == "delta_half") report.delta_half = v;
    else if (key == "accuracy") report.accuracy = v;
    else if (key == "completeness") report.completeness = v;
    else if (key == "overall") report.overall = v;
    else throw InvalidInput("unknown metric key '" + key + "'");
  }
  return report;
}

MetricReport depth_metrics(const DenseMap& pred, const DenseMap& gt, const ValidityMask& mask) {
  if (pred.channels() != 1 || gt.channels() != 1) {
    throw InvalidArgument("depth_metrics expects single-channel maps");
  }
  if (!pred.same_shape(gt) || !mask.matches(gt)) {
    throw InvalidArgument("depth_metrics: dimension mismatch");
  }
  const double threshold = delta_half_threshold();
  double abs_rel = 0.0;
  double sq = 0.0;
  std::size_t inliers = 0;
  std::size_t n = 0;
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      if (!mask.valid(r, c)) continue;
      const double g = gt.at(r, c);
      const double p = pred.at(r, c);
      if (!(g > 0.0)) {
        throw InvalidInput("depth_metrics: non-positive ground truth at " + pixel_name(r, c));
      }
      const double err = p - g;
      abs_rel += std::abs(err) / g;
      sq += err * err;
      if (p > 0.0 && std::max(p / g, g / p) < threshold) ++inliers;
      ++n;
    }
  }
  if (n == 0) throw EmptyEvaluation("depth_metrics: no valid pixels");
  MetricReport report;
  report.abs_rel = abs_rel / static_cast<double>(n);
  report.rmse = std::sqrt(sq / static_cast<double>(n));
  report.delta_half = static_cast<double>(inliers) / static_cast<double>(n);
  report.valid_count = n;
  return report;
}

double geometry_rmse(const DenseMap& pred, const DenseMap& gt, const ValidityMask& mask) {
  if (!pred.same_shape(gt) || !mask.matches(gt)) {
    throw InvalidArgument("geometry_rmse: dimension mismatch");
  }
  double sq = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      if (!mask.valid(r, c)) continue;
      for (int ch = 0; ch < gt.channels(); ++ch) {
        const double e = pred.at(r, c, ch) - gt.at(r, c, ch);
        sq += e * e;
      }
      ++n;
    }
  }
  if (n == 0) throw EmptyEvaluation("geometry_rmse: no valid pixels");
  return std::sqrt(sq / static_cast<double>(n));
}

std::vector<double> nearest_distances(std::span<const Point3> queries,
                                      std::span<const Point3> reference,
                                      NearestSearch search) {
  if (reference.empty()) throw EmptyEvaluation("nearest_distances: empty reference set");
  if (search == NearestSearch::kBruteForce) return brute_force_nearest(queries, reference);
  const PointGrid grid(reference);
  std::vector<double> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = grid.nearest(queries[i]);
  return out;
}

MetricReport pointmap_metrics(std::span<const Point3> pred, std::span<const Point3> gt,
                              NearestSearch search) {
  if (pred.empty() || gt.empty()) throw EmptyEvaluation("pointmap_metrics: empty point set");
  MetricReport report;
  report.accuracy = mean_of(nearest_distances(pred, gt, search));
  report.completeness = mean_of(nearest_distances(gt, pred, search));
  report.overall = (*report.accuracy + *report.completeness) / 2.0;
  report.valid_count = pred.size();
  return report;
}

std::vector<Point3> points_from_map(const DenseMap& pointmap, const ValidityMask& mask) {
  if (pointmap.channels() != 3) throw InvalidArgument("points_from_map: need 3 channels");
  if (!mask.matches(pointmap)) throw InvalidArgument("points_from_map: mask mismatch");
  std::vector<Point3> pts;
  for (int r = 0; r < pointmap.height(); ++r) {
    for (int c = 0; c < pointmap.width(); ++c) {
      if (!mask.valid(r, c)) continue;
      pts.push_back({pointmap.at(r, c, 0), pointmap.at(r, c, 1), pointmap.at(r, c, 2)});
    }
  }
  return pts;
}

}  // namespace retrofit

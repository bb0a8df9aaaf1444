#include "retrofit/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "retrofit/error.hpp"
#include "retrofit/random.hpp"

namespace retrofit {

std::string_view to_string(SelectionPolicy policy) {
  switch (policy) {
    case SelectionPolicy::kEntropyThreshold: return "entropy_threshold";
    case SelectionPolicy::kTopFraction: return "top_fraction";
    case SelectionPolicy::kRandom: return "random";
    case SelectionPolicy::kEdge: return "edge";
  }
  return "unknown";
}

std::size_t PixelSelection::core_count() const {
  return static_cast<std::size_t>(std::count(is_core.begin(), is_core.end(), std::uint8_t{1}));
}

std::vector<Coord> PixelSelection::core_coords() const {
  std::vector<Coord> out;
  out.reserve(core_count());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (is_core[i]) out.push_back(coords[i]);
  }
  return out;
}

PixelSelection select_entropy(const DenseMap& entropy, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("select_entropy: alpha must lie in [0, 1], got " +
                          std::to_string(alpha));
  }
  if (entropy.channels() != 1) throw InvalidArgument("select_entropy: need a 1-channel map");
  PixelSelection sel;
  sel.height = entropy.height();
  sel.width = entropy.width();
  sel.policy = SelectionPolicy::kEntropyThreshold;
  sel.alpha_used = alpha;
  for (int r = 0; r < entropy.height(); ++r) {
    for (int c = 0; c < entropy.width(); ++c) {
      if (entropy.at(r, c) > alpha) {
        sel.coords.push_back({r, c});
        sel.is_core.push_back(1);
      }
    }
  }
  return sel;
}

PixelSelection select_top_fraction(const DenseMap& score, double fraction,
                                   SelectionPolicy policy) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("select_top_fraction: fraction must lie in (0, 1], got " +
                          std::to_string(fraction));
  }
  if (score.channels() != 1) throw InvalidArgument("select_top_fraction: need a 1-channel map");
  const std::size_t n = score.pixel_count();
  const auto k = std::min(
      n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  const auto values = score.values();

  // Raster index order equals lexicographic coordinate order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto before = [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  };
  if (k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                              order.end(), before);
  order.resize(k);
  std::sort(order.begin(), order.end());

  PixelSelection sel;
  sel.height = score.height();
  sel.width = score.width();
  sel.policy = policy;
  sel.coords.reserve(k);
  for (std::size_t idx : order) {
    sel.coords.push_back({static_cast<int>(idx / static_cast<std::size_t>(score.width())),
                          static_cast<int>(idx % static_cast<std::size_t>(score.width()))});
  }
  sel.is_core.assign(k, 1);
  return sel;
}

DenseMap random_score_map(int height, int width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw InvalidArgument("random_score_map: empty dimensions");
  Random rng(seed);
  std::vector<double> v(static_cast<std::size_t>(height) * static_cast<std::size_t>(width));
  for (double& x : v) x = rng.uniform();
  return DenseMap(height, width, 1, MapKind::kLogits, std::move(v));
}

DenseMap edge_score_map(const DenseMap& rgb) {
  if (rgb.channels() != 3) throw InvalidArgument("edge_score_map: need an rgb map");
  const int h = rgb.height();
  const int w = rgb.width();
  std::vector<double> lum(rgb.pixel_count());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      lum[static_cast<std::size_t>(r) * w + c] =
          0.299 * rgb.at(r, c, 0) + 0.587 * rgb.at(r, c, 1) + 0.114 * rgb.at(r, c, 2);
    }
  }
  const auto l = [&](int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return lum[static_cast<std::size_t>(r) * w + c];
  };
  std::vector<double> mag(rgb.pixel_count());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double gx = (l(r - 1, c + 1) + 2.0 * l(r, c + 1) + l(r + 1, c + 1)) -
                        (l(r - 1, c - 1) + 2.0 * l(r, c - 1) + l(r + 1, c - 1));
      const double gy = (l(r + 1, c - 1) + 2.0 * l(r + 1, c) + l(r + 1, c + 1)) -
                        (l(r - 1, c - 1) + 2.0 * l(r - 1, c) + l(r - 1, c + 1));
      mag[static_cast<std::size_t>(r) * w + c] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return DenseMap(h, w, 1, MapKind::kLogits, std::move(mag));
}

PixelSelection select_random(int height, int width, double fraction, std::uint64_t seed) {
  return select_top_fraction(random_score_map(height, width, seed), fraction,
                             SelectionPolicy::kRandom);
}

PixelSelection select_edge(const DenseMap& rgb, double fraction) {
  return select_top_fraction(edge_score_map(rgb), fraction, SelectionPolicy::kEdge);
}

PixelSelection dilate_halo(const PixelSelection& sel, int radius) {
  if (radius < 0) throw InvalidArgument("dilate_halo: radius must be non-negative");
  if (radius == 0 || sel.empty()) return sel;
  const int h = sel.height;
  const int w = sel.width;
  // 0 = absent, 1 = halo, 2 = core
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const Coord p = sel.coords[i];
    auto& cell = grid[static_cast<std::size_t>(p.row) * w + p.col];
    cell = std::max<std::uint8_t>(cell, sel.is_core[i] ? 2 : 1);
  }
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (!sel.is_core[i]) continue;
    const Coord p = sel.coords[i];
    const int r0 = std::max(0, p.row - radius);
    const int r1 = std::min(h - 1, p.row + radius);
    const int c0 = std::max(0, p.col - radius);
    const int c1 = std::min(w - 1, p.col + radius);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        auto& cell = grid[static_cast<std::size_t>(r) * w + c];
        if (cell == 0) cell = 1;
      }
    }
  }
  PixelSelection out;
  out.height = h;
  out.width = w;
  out.policy = sel.policy;
  out.alpha_used = sel.alpha_used;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto cell = grid[static_cast<std::size_t>(r) * w + c];
      if (cell == 0) continue;
      out.coords.push_back({r, c});
      out.is_core.push_back(cell == 2 ? 1 : 0);
    }
  }
  return out;
}

SparseTensor assemble_sparse_input(const PixelSelection& sel, const DenseMap& rgb,
                                   const DenseMap& coarse, const DenseMap& entropy) {
  if (sel.empty()) throw InvalidArgument("assemble_sparse_input: empty selection");
  const auto same_hw = [&](const DenseMap& m) {
    return m.height() == sel.height && m.width() == sel.width;
  };
  if (!same_hw(rgb) || !same_hw(coarse) || !same_hw(entropy)) {
    throw InvalidArgument("assemble_sparse_input: map dimensions differ from selection");
  }
  if (rgb.channels() != 3 || entropy.channels() != 1) {
    throw InvalidArgument("assemble_sparse_input: expected rgb(3) and entropy(1) maps");
  }
  const int geo = coarse.channels();
  const int width = geo + 4;
  std::vector<double> feats(sel.size() * static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const Coord p = sel.coords[i];
    double* row = &feats[i * static_cast<std::size_t>(width)];
    for (int ch = 0; ch < 3; ++ch) row[ch] = rgb.at(p.row, p.col, ch);
    for (int ch = 0; ch < geo; ++ch) row[3 + ch] = coarse.at(p.row, p.col, ch);
    row[3 + geo] = entropy.at(p.row, p.col);
  }
  return SparseTensor(make_coordinate_set(sel.coords, 1), width, std::move(feats));
}

double top_fraction_recall(const DenseMap& score, const DenseMap& error, double fraction) {
  if (score.height() != error.height() || score.width() != error.width()) {
    throw InvalidArgument("top_fraction_recall: dimension mismatch");
  }
  const auto picked = select_top_fraction(score, fraction);
  const auto worst = select_top_fraction(error, fraction);
  if (worst.empty()) throw EmptyEvaluation("top_fraction_recall: empty error selection");
  std::size_t hits = 0;
  auto a = picked.coords.begin();
  for (const Coord& c : worst.coords) {
    while (a != picked.coords.end() && *a < c) ++a;
    if (a != picked.coords.end() && *a == c) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(worst.size());
}

}  // namespace retrofit

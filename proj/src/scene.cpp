#include "retrofit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "retrofit/error.hpp"
#include "retrofit/random.hpp"
#include "retrofit/resample.hpp"

namespace retrofit {

namespace {

enum class Shape { kRect, kEllipse, kBar };

struct Object {
  Shape shape;
  double depth;
  double tilt_r, tilt_c;  // depth change per pixel
  double cr, cc;          // centre
  double a, b;            // half extents (rect, ellipse) or half length, half width (bar)
  double angle;           // bar orientation
  double albedo[3];
  double stripe_period;   // 0 for an untextured object
};

bool covers(const Object& o, double r, double c) {
  const double dr = r - o.cr;
  const double dc = c - o.cc;
  switch (o.shape) {
    case Shape::kRect: return std::abs(dr) <= o.a && std::abs(dc) <= o.b;
    case Shape::kEllipse: return (dr * dr) / (o.a * o.a) + (dc * dc) / (o.b * o.b) <= 1.0;
    case Shape::kBar: {
      const double along = dc * std::cos(o.angle) + dr * std::sin(o.angle);
      const double across = -dc * std::sin(o.angle) + dr * std::cos(o.angle);
      return std::abs(along) <= o.a && std::abs(across) <= o.b;
    }
  }
  return false;
}

Object random_object(Random& rng, int h, int w, double depth, double scale) {
  Object o{};
  const double size = std::min(h, w) * scale;
  const double pick = rng.uniform();
  o.shape = pick < 0.4 ? Shape::kRect : pick < 0.75 ? Shape::kEllipse : Shape::kBar;
  o.depth = depth;
  o.tilt_r = rng.uniform(-0.1, 0.1) / size;
  o.tilt_c = rng.uniform(-0.1, 0.1) / size;
  o.cr = rng.uniform(0.0, h - 1.0);
  o.cc = rng.uniform(0.0, w - 1.0);
  switch (o.shape) {
    case Shape::kRect:
    case Shape::kEllipse:
      o.a = rng.uniform(0.04, 0.15) * size;
      o.b = rng.uniform(0.04, 0.15) * size;
      break;
    case Shape::kBar:
      o.a = rng.uniform(0.15, 0.4) * size;
      o.b = rng.integer(1, 3) * 0.5;  // 1 to 3 pixels wide
      o.angle = rng.uniform(0.0, std::numbers::pi);
      break;
  }
  for (double& v : o.albedo) v = rng.uniform(0.2, 0.9);
  o.stripe_period = rng.uniform() < 0.5 ? rng.uniform(6.0, 20.0) : 0.0;
  return o;
}

}  // namespace

SceneSample synth_scene(std::uint64_t seed, const SceneConfig& cfg) {
  const int h = cfg.height;
  const int w = cfg.width;
  if (h < 32 || w < 32) throw InvalidArgument("synth_scene: dimensions must be at least 32");
  if (cfg.n_objects < 1) throw InvalidArgument("synth_scene: need at least one object");
  if (!(cfg.object_scale > 0.0)) throw InvalidArgument("synth_scene: object_scale must be > 0");
  Random rng(seed);

  // Ramp receding towards the top of the image.
  const double bg_near = rng.uniform(5.0, 6.0);
  const double bg_far = bg_near + rng.uniform(1.0, 2.5);
  const double bg_side = rng.uniform(-0.5, 0.5);

  // Object depths in [1, 4.5], pairwise at least 0.12 apart when possible.
  std::vector<double> depths;
  for (int i = 0; i < cfg.n_objects; ++i) {
    double d = rng.uniform(1.0, 4.5);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const bool clear = std::none_of(depths.begin(), depths.end(),
                                      [d](double e) { return std::abs(e - d) < 0.12; });
      if (clear) break;
      d = rng.uniform(1.0, 4.5);
    }
    depths.push_back(d);
  }
  std::vector<Object> objects;
  for (double d : depths) {
    Object o = random_object(rng, h, w, d, cfg.object_scale);
    if (cfg.flat) o.tilt_r = o.tilt_c = 0.0;
    if (cfg.rectangles_only && o.shape != Shape::kRect) {
      o.shape = Shape::kRect;
      o.a = std::max(o.a, 2.0);
      o.b = std::max(o.b, 2.0);
    }
    objects.push_back(o);
  }
  const double bg_albedo[3] = {rng.uniform(0.4, 0.7), rng.uniform(0.4, 0.7),
                               rng.uniform(0.4, 0.7)};
  const double checker = rng.uniform(12.0, 32.0);

  std::vector<double> depth(static_cast<std::size_t>(h) * w);
  std::vector<int> owner(depth.size(), -1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      depth[static_cast<std::size_t>(r) * w + c] =
          cfg.flat ? bg_far
                   : bg_far + (bg_near - bg_far) * r / (h - 1.0) + bg_side * c / (w - 1.0);
    }
  }
  // Objects in order; each only scans its bounding box.
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const Object& o = objects[k];
    const double reach = std::hypot(o.a, o.b);
    const int r0 = std::max(0, static_cast<int>(std::floor(o.cr - reach)));
    const int r1 = std::min(h - 1, static_cast<int>(std::ceil(o.cr + reach)));
    const int c0 = std::max(0, static_cast<int>(std::floor(o.cc - reach)));
    const int c1 = std::min(w - 1, static_cast<int>(std::ceil(o.cc + reach)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (!covers(o, r, c)) continue;
        const auto i = static_cast<std::size_t>(r) * w + c;
        const double od = o.depth + o.tilt_r * (r - o.cr) + o.tilt_c * (c - o.cc);
        if (od < depth[i]) {
          depth[i] = od;
          owner[i] = static_cast<int>(k);
        }
      }
    }
  }

  // Lambertian shading from depth gradients, light from the upper left.
  const double lx = -0.4, ly = -0.5, lz = 0.77;
  const double slope_scale = 0.5 * std::min(h, w) / 8.0;
  std::vector<double> rgb(depth.size() * 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto i = static_cast<std::size_t>(r) * w + c;
      const auto at = [&](int rr, int cc) {
        rr = std::clamp(rr, 0, h - 1);
        cc = std::clamp(cc, 0, w - 1);
        return depth[static_cast<std::size_t>(rr) * w + cc];
      };
      const double gx = (at(r, c + 1) - at(r, c - 1)) * 0.5 * slope_scale;
      const double gy = (at(r + 1, c) - at(r - 1, c)) * 0.5 * slope_scale;
      const double norm = std::sqrt(gx * gx + gy * gy + 1.0);
      const double shade = 0.35 + 0.65 * std::max(0.0, (-gx * lx - gy * ly + lz) / norm);
      double albedo[3];
      if (owner[i] < 0) {
        const bool dark = (static_cast<int>(r / checker) + static_cast<int>(c / checker)) % 2;
        for (int ch = 0; ch < 3; ++ch) albedo[ch] = bg_albedo[ch] * (dark ? 0.9 : 1.0);
      } else {
        const Object& o = objects[static_cast<std::size_t>(owner[i])];
        double tex = 1.0;
        if (o.stripe_period > 0.0) {
          tex = 1.0 + 0.15 * std::sin(2.0 * std::numbers::pi * (r + c) / o.stripe_period);
        }
        for (int ch = 0; ch < 3; ++ch) albedo[ch] = o.albedo[ch] * tex;
      }
      for (int ch = 0; ch < 3; ++ch) rgb[i * 3 + ch] = std::clamp(albedo[ch] * shade, 0.0, 1.0);
    }
  }

  SceneSample s{DenseMap(h, w, 3, MapKind::kRgb, std::move(rgb)),
                DenseMap(1, 1, 1, MapKind::kDepth), ValidityMask::all_valid(h, w), seed};
  if (cfg.kind == GeometryKind::kDepth) {
    s.gt_geo = DenseMap(h, w, 1, MapKind::kDepth, std::move(depth));
  } else {
    const double f = 0.8 * std::max(h, w);
    std::vector<double> pts(depth.size() * 3);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const auto i = static_cast<std::size_t>(r) * w + c;
        pts[i * 3 + 0] = (c + 0.5 - 0.5 * w) / f * depth[i];
        pts[i * 3 + 1] = (r + 0.5 - 0.5 * h) / f * depth[i];
        pts[i * 3 + 2] = depth[i];
      }
    }
    s.gt_geo = DenseMap(h, w, 3, MapKind::kPointmap, std::move(pts));
  }
  return s;
}

DenseMap depth_channel(const DenseMap& geo) {
  if (geo.kind() == MapKind::kDepth) return geo;
  if (geo.kind() != MapKind::kPointmap) {
    throw InvalidArgument("depth_channel: expected a depth map or pointmap, got " +
                          std::string(to_string(geo.kind())));
  }
  std::vector<double> z(geo.pixel_count());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = geo.values()[i * 3 + 2];
  return DenseMap(geo.height(), geo.width(), 1, MapKind::kDepth, std::move(z), geo.precision());
}

double boundary_fraction(const DenseMap& depth, double rel_jump) {
  const auto v = depth.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double threshold = rel_jump * (*hi - *lo);
  const int h = depth.height();
  const int w = depth.width();
  std::size_t count = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double d = depth.at(r, c);
      const bool jump = (r > 0 && std::abs(depth.at(r - 1, c) - d) > threshold) ||
                        (r + 1 < h && std::abs(depth.at(r + 1, c) - d) > threshold) ||
                        (c > 0 && std::abs(depth.at(r, c - 1) - d) > threshold) ||
                        (c + 1 < w && std::abs(depth.at(r, c + 1) - d) > threshold);
      count += jump ? 1 : 0;
    }
  }
  return static_cast<double>(count) / static_cast<double>(depth.pixel_count());
}

BackboneOutput synthetic_backbone(const SceneSample& scene, const BackboneConfig& cfg) {
  if (cfg.k_bins < 2) throw InvalidArgument("synthetic_backbone: k_bins must be at least 2");
  if (cfg.noise_sigma < 0.0) throw InvalidArgument("synthetic_backbone: negative noise");
  const DenseMap& geo = scene.gt_geo;
  const DenseMap depth = depth_channel(geo);
  const int hh = geo.height();
  const int hw = geo.width();

  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (int r = 0; r < hh; ++r) {
    for (int c = 0; c < hw; ++c) {
      if (!scene.mask.valid(r, c)) continue;
      const double d = depth.at(r, c);
      lo = any ? std::min(lo, d) : d;
      hi = any ? std::max(hi, d) : d;
      any = true;
    }
  }
  if (!any) throw EmptyEvaluation("synthetic_backbone: scene has no valid pixels");
  const double range = std::max(hi - lo, 1e-9);

  DenseMap coarse = downsample_area(geo, cfg.long_side);
  const int lh = coarse.height();
  const int lw = coarse.width();
  {
    Random rng(cfg.seed);
    const double sigma = cfg.noise_sigma * range;
    std::vector<double> v(coarse.values().begin(), coarse.values().end());
    if (sigma > 0.0) {
      for (double& x : v) x += sigma * rng.normal();
    }
    coarse = DenseMap(lh, lw, geo.channels(), geo.kind(), std::move(v));
  }

  // Group full-resolution pixels by the low-resolution cell they upsample from.
  const int k = cfg.k_bins;
  const double bin = range / k;
  const double half = 0.5 * bin;
  std::vector<std::vector<double>> cells(static_cast<std::size_t>(lh) * lw);
  for (int r = 0; r < hh; ++r) {
    const int cr = static_cast<int>(static_cast<long long>(r) * lh / hh);
    for (int c = 0; c < hw; ++c) {
      if (!scene.mask.valid(r, c)) continue;
      const int cc = static_cast<int>(static_cast<long long>(c) * lw / hw);
      cells[static_cast<std::size_t>(cr) * lw + cc].push_back(depth.at(r, c));
    }
  }

  std::vector<double> logits(cells.size() * static_cast<std::size_t>(k));
  std::vector<double> mass(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& samples = cells[i];
    std::fill(mass.begin(), mass.end(), 0.0);
    if (!samples.empty()) {
      const auto mid = samples.begin() + static_cast<std::ptrdiff_t>((samples.size() - 1) / 2);
      std::nth_element(samples.begin(), mid, samples.end());
      const double median = *mid;
      const int centre_bin =
          std::clamp(static_cast<int>(std::floor((median - lo) / bin)), 0, k - 1);
      const double origin = median - (centre_bin + 0.5) * bin;
      for (double d : samples) {
        const double a = d - half;
        const double b = d + half;
        for (int j = 0; j < k; ++j) {
          // The outer bins extend to infinity.
          const double e0 = j == 0 ? -1e300 : origin + j * bin;
          const double e1 = j == k - 1 ? 1e300 : origin + (j + 1) * bin;
          const double overlap = std::min(b, e1) - std::max(a, e0);
          if (overlap > 0.0) mass[static_cast<std::size_t>(j)] += overlap / bin;
        }
      }
      for (double& m : mass) m /= static_cast<double>(samples.size());
    }
    for (int j = 0; j < k; ++j) {
      logits[i * k + static_cast<std::size_t>(j)] =
          std::log(std::max(mass[static_cast<std::size_t>(j)], 1e-6));
    }
  }
  return {std::move(coarse), DenseMap(lh, lw, k, MapKind::kLogits, std::move(logits)),
          cfg.long_side};
}

void validate_backbone(const BackboneOutput& out) {
  if (out.coarse_lr.height() != out.logits_lr.height() ||
      out.coarse_lr.width() != out.logits_lr.width()) {
    throw InvalidArgument("backbone coarse map and logits differ in size");
  }
  if (out.logits_lr.channels() < 2) throw InvalidArgument("backbone logits need >= 2 channels");
  if (out.coarse_lr.kind() != MapKind::kDepth && out.coarse_lr.kind() != MapKind::kPointmap) {
    throw InvalidArgument("backbone coarse map must be depth or pointmap");
  }
}

ScenePreset desk_preset(GeometryKind kind) {
  ScenePreset p;
  p.scene.kind = kind;
  p.backbone.long_side = 64;
  return p;
}

ScenePreset preset_2k(GeometryKind kind) {
  ScenePreset p;
  p.scene.height = 1536;
  p.scene.width = 2048;
  p.scene.n_objects = 288;
  p.scene.object_scale = 1.0 / 3.0;
  p.scene.kind = kind;
  p.backbone.long_side = 256;
  return p;
}

}  // namespace retrofit

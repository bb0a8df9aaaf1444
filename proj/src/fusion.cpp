#include "retrofit/fusion.hpp"

#include <cmath>
#include <string>

#include "retrofit/entropy.hpp"
#include "retrofit/error.hpp"

namespace retrofit {

namespace {

constexpr double kEntropyFuseEps = 1e-8;

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

void check_inputs(std::span<const double> coarse, std::span<const double> delta, double h_coarse,
                  double h_delta) {
  if (coarse.size() != delta.size()) {
    throw InvalidArgument("fusion: coarse and delta widths differ");
  }
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    if (!std::isfinite(coarse[i]) || !std::isfinite(delta[i])) {
      throw InvalidInput("fusion: non-finite geometry input");
    }
  }
  if (!std::isfinite(h_coarse) || !std::isfinite(h_delta)) {
    throw InvalidInput("fusion: non-finite entropy input");
  }
}

struct GateForward {
  std::vector<double> z;
  std::vector<double> pre;  // hidden pre-activations
  double weight = 0.0;
};

GateForward gate_forward(std::span<const double> coarse, std::span<const double> delta,
                         double h_coarse, double h_delta, const FusionParams& p) {
  GateForward f;
  f.z.reserve(static_cast<std::size_t>(p.input_width()));
  f.z.insert(f.z.end(), coarse.begin(), coarse.end());
  f.z.insert(f.z.end(), delta.begin(), delta.end());
  f.z.push_back(h_coarse);
  f.z.push_back(h_delta);
  const auto hidden = static_cast<std::size_t>(p.hidden);
  f.pre.assign(p.b1.begin(), p.b1.end());
  for (std::size_t i = 0; i < f.z.size(); ++i) {
    const double zi = f.z[i];
    const double* row = &p.w1[i * hidden];
    for (std::size_t j = 0; j < hidden; ++j) f.pre[j] += row[j] * zi;
  }
  double s = p.b2[0];
  for (std::size_t j = 0; j < hidden; ++j) s += p.w2[j] * std::max(f.pre[j], 0.0);
  f.weight = sigmoid(s);
  return f;
}

GateOutput blend(std::span<const double> coarse, std::span<const double> delta, double w) {
  GateOutput out;
  out.weight = w;
  out.value.resize(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) out.value[i] = coarse[i] + (1.0 - w) * delta[i];
  return out;
}

template <typename Ref, typename P>
std::vector<Ref> collect(P& p) {
  const auto in = static_cast<std::size_t>(p.input_width());
  const auto h = static_cast<std::size_t>(p.hidden);
  return {{"fusion.layer1.weight", {in, h}, p.w1},
          {"fusion.layer1.bias", {h}, p.b1},
          {"fusion.layer2.weight", {h}, p.w2},
          {"fusion.layer2.bias", {1}, p.b2}};
}

}  // namespace

FusionParams FusionParams::zeros(int geo_channels, int hidden) {
  if (geo_channels < 1 || hidden < 1) throw InvalidArgument("fusion: bad gate shape");
  FusionParams p;
  p.geo_channels = geo_channels;
  p.hidden = hidden;
  p.w1.assign(static_cast<std::size_t>(p.input_width() * hidden), 0.0);
  p.b1.assign(static_cast<std::size_t>(hidden), 0.0);
  p.w2.assign(static_cast<std::size_t>(hidden), 0.0);
  p.b2 = {0.0};
  return p;
}

FusionParams FusionParams::initialize(int geo_channels, std::uint64_t seed, int hidden) {
  FusionParams p = zeros(geo_channels, hidden);
  fill_uniform(p.w1, std::sqrt(6.0 / p.input_width()), seed);
  fill_uniform(p.w2, std::sqrt(6.0 / hidden), seed + 1);
  return p;
}

void FusionParams::check(int expected_channels) const {
  const auto h = static_cast<std::size_t>(hidden);
  if (geo_channels != expected_channels || hidden < 1 ||
      w1.size() != static_cast<std::size_t>(input_width()) * h || b1.size() != h ||
      w2.size() != h || b2.size() != 1) {
    throw InvalidArgument("fusion parameters do not match " + std::to_string(expected_channels) +
                          " geometry channels");
  }
}

std::vector<ParamRef> FusionParams::parameters() { return collect<ParamRef>(*this); }
std::vector<ConstParamRef> FusionParams::parameters() const {
  return collect<ConstParamRef>(*this);
}

std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::kGated: return "gated";
    case FusionStrategy::kDirect: return "direct";
    case FusionStrategy::kEntropy: return "entropy";
    case FusionStrategy::kCoarseKeep: return "coarse";
  }
  return "unknown";
}

FusionStrategy parse_fusion_strategy(std::string_view name) {
  for (auto s : {FusionStrategy::kGated, FusionStrategy::kDirect, FusionStrategy::kEntropy,
                 FusionStrategy::kCoarseKeep}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown fusion strategy '" + std::string(name) + "'");
}

GateOutput gated_fuse(std::span<const double> coarse, std::span<const double> delta,
                      double h_coarse, double h_delta, const FusionParams& params) {
  check_inputs(coarse, delta, h_coarse, h_delta);
  params.check(static_cast<int>(coarse.size()));
  return blend(coarse, delta, gate_forward(coarse, delta, h_coarse, h_delta, params).weight);
}

std::vector<double> direct_replace(std::span<const double> coarse,
                                   std::span<const double> delta) {
  if (coarse.size() != delta.size()) throw InvalidArgument("fusion: widths differ");
  std::vector<double> out(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) out[i] = coarse[i] + delta[i];
  return out;
}

GateOutput entropy_weight_fuse(std::span<const double> coarse, std::span<const double> delta,
                               double h_coarse, double h_delta) {
  check_inputs(coarse, delta, h_coarse, h_delta);
  return blend(coarse, delta, h_delta / (h_coarse + h_delta + kEntropyFuseEps));
}

GateOutput fuse(FusionStrategy strategy, std::span<const double> coarse,
                std::span<const double> delta, double h_coarse, double h_delta,
                const FusionParams& params) {
  switch (strategy) {
    case FusionStrategy::kGated: return gated_fuse(coarse, delta, h_coarse, h_delta, params);
    case FusionStrategy::kEntropy: return entropy_weight_fuse(coarse, delta, h_coarse, h_delta);
    case FusionStrategy::kDirect: return {direct_replace(coarse, delta), 0.0};
    case FusionStrategy::kCoarseKeep: return {{coarse.begin(), coarse.end()}, 1.0};
  }
  throw InvalidArgument("unknown fusion strategy");
}

GateGrads fusion_backward(std::span<const double> coarse, std::span<const double> delta,
                          double h_coarse, double h_delta, const FusionParams& params,
                          std::span<const double> upstream, FusionParams& param_grads) {
  check_inputs(coarse, delta, h_coarse, h_delta);
  const int c = static_cast<int>(coarse.size());
  params.check(c);
  param_grads.check(c);
  if (upstream.size() != coarse.size()) {
    throw InvalidArgument("fusion_backward: upstream width mismatch");
  }
  if (param_grads.hidden != params.hidden) {
    throw InvalidArgument("fusion_backward: gradient buffer has the wrong hidden width");
  }
  const GateForward f = gate_forward(coarse, delta, h_coarse, h_delta, params);
  const double w = f.weight;
  const auto hidden = static_cast<std::size_t>(params.hidden);
  const auto cc = static_cast<std::size_t>(c);

  GateGrads g;
  g.coarse.assign(upstream.begin(), upstream.end());
  g.delta.resize(cc);
  double d_w = 0.0;
  for (std::size_t i = 0; i < cc; ++i) {
    g.delta[i] = (1.0 - w) * upstream[i];
    d_w -= upstream[i] * delta[i];
  }
  const double d_s = d_w * w * (1.0 - w);
  param_grads.b2[0] += d_s;
  std::vector<double> d_pre(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    const double r = std::max(f.pre[j], 0.0);
    param_grads.w2[j] += d_s * r;
    d_pre[j] = f.pre[j] > 0.0 ? d_s * params.w2[j] : 0.0;
    param_grads.b1[j] += d_pre[j];
  }
  std::vector<double> d_z(f.z.size(), 0.0);
  for (std::size_t i = 0; i < f.z.size(); ++i) {
    const double* row = &params.w1[i * hidden];
    double* grow = &param_grads.w1[i * hidden];
    for (std::size_t j = 0; j < hidden; ++j) {
      grow[j] += f.z[i] * d_pre[j];
      d_z[i] += row[j] * d_pre[j];
    }
  }
  for (std::size_t i = 0; i < cc; ++i) {
    g.coarse[i] += d_z[i];
    g.delta[i] += d_z[cc + i];
  }
  g.h_coarse = d_z[2 * cc];
  g.h_delta = d_z[2 * cc + 1];
  return g;
}

FusedMap apply_fusion_to_map(const DenseMap& coarse_hr, const PixelSelection& sel,
                             const SparseTensor& refined, const DenseMap& h_map,
                             const FusionParams& params, FusionStrategy strategy) {
  const int c = coarse_hr.channels();
  if (sel.height != coarse_hr.height() || sel.width != coarse_hr.width() ||
      h_map.height() != coarse_hr.height() || h_map.width() != coarse_hr.width() ||
      h_map.channels() != 1) {
    throw InvalidArgument("apply_fusion_to_map: map and selection dimensions differ");
  }
  if (refined.channels() < c + 2) {
    throw InvalidArgument("apply_fusion_to_map: refined tensor needs " + std::to_string(c) +
                          " residual channels plus confidence logits");
  }
  if (strategy == FusionStrategy::kGated) params.check(c);

  FusedMap out{coarse_hr, sel.core_coords(), {}, {}};
  const std::size_t n = out.core.size();
  std::vector<int> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = refined.coordinates().find(out.core[i]);
    if (rows[i] < 0) {
      throw Inconsistency("no refined features for core pixel " +
                          pixel_name(out.core[i].row, out.core[i].col));
    }
  }
  out.weights.resize(n);
  out.h_delta.resize(n);
  std::vector<std::vector<double>> values(n);
  const auto cc = static_cast<std::size_t>(c);
  // Row-parallel: each core pixel is computed and stored by exactly one task.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n); ++k) {
    const auto i = static_cast<std::size_t>(k);
    const auto row = refined.row(static_cast<std::size_t>(rows[i]));
    const Coord p = out.core[i];
    const double hd = normalized_entropy(row.subspan(cc));
    const GateOutput g =
        fuse(strategy, coarse_hr.pixel(p.row, p.col), row.first(cc), h_map.at(p.row, p.col), hd,
             params);
    out.h_delta[i] = hd;
    out.weights[i] = g.weight;
    values[i] = g.value;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      out.map.set(out.core[i].row, out.core[i].col, ch, values[i][static_cast<std::size_t>(ch)]);
    }
  }
  return out;
}

}  // namespace retrofit

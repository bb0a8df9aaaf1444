#include "retrofit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "retrofit/entropy.hpp"
#include "retrofit/error.hpp"
#include "retrofit/metrics.hpp"
#include "retrofit/random.hpp"

namespace retrofit {

void TrainConfig::validate() const {
  if (steps < 1) throw InvalidArgument("train: steps must be >= 1");
  if (batch < 1) throw InvalidArgument("train: batch must be >= 1");
  if (!(learn_rate >= 0.0) || !std::isfinite(learn_rate)) {
    throw InvalidArgument("train: learn_rate must be finite and >= 0");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("train: alpha must lie in [0, 1]");
  if (halo < 0) throw InvalidArgument("train: halo must be >= 0");
  if (crop < 1) throw InvalidArgument("train: crop must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("train: Adam betas must lie in [0, 1)");
  }
}

LossReport refine_loss(const DenseMap& fused, const DenseMap& gt, const ValidityMask& mask,
                       const PixelSelection& sel) {
  if (!fused.same_shape(gt) || !mask.matches(fused) || sel.height != fused.height() ||
      sel.width != fused.width()) {
    throw InvalidArgument("refine_loss: fused map, ground truth, mask and selection differ");
  }
  LossReport rep;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const Coord p = sel.coords[i];
    if (!sel.is_core[i] || !mask.valid(p.row, p.col)) continue;
    for (int c = 0; c < fused.channels(); ++c) {
      const double e = fused.at(p.row, p.col, c) - gt.at(p.row, p.col, c);
      abs_sum += std::abs(e);
      sq_sum += e * e;
    }
    ++rep.per_pixel_count;
  }
  if (rep.per_pixel_count == 0) throw EmptyEvaluation("refine_loss: no valid core pixel");
  const auto n = static_cast<double>(rep.per_pixel_count);
  rep.total = abs_sum / n;
  rep.selected_rmse = std::sqrt(sq_sum / n);
  rep.full_rmse = geometry_rmse(fused, gt, mask);
  return rep;
}

TrainingScene make_training_scene(const SceneSample& scene, const BackboneOutput& backbone,
                                  double alpha) {
  const int h = scene.rgb.height();
  const int w = scene.rgb.width();
  PreparedInputs in = prepare_inputs(backbone, h, w);
  if (!in.coarse_hr.same_shape(scene.gt_geo)) {
    throw InvalidArgument("training scene: backbone geometry does not match ground truth");
  }
  std::vector<Coord> core = select_entropy(in.entropy_hr, alpha).core_coords();
  return {scene.rgb, scene.gt_geo, scene.mask, std::move(in), std::move(core)};
}

CropItem make_crop(const TrainingScene& scene, Coord centre, int crop, int halo) {
  const int h = scene.rgb.height();
  const int w = scene.rgb.width();
  CropItem item;
  item.scene = &scene;
  item.r0 = std::clamp(centre.row - crop / 2, 0, std::max(0, h - crop));
  item.c0 = std::clamp(centre.col - crop / 2, 0, std::max(0, w - crop));
  item.r1 = std::min(h, item.r0 + crop);
  item.c1 = std::min(w, item.c0 + crop);

  PixelSelection sel;
  sel.height = h;
  sel.width = w;
  auto it = std::lower_bound(scene.core.begin(), scene.core.end(), Coord{item.r0, 0});
  for (; it != scene.core.end() && it->row < item.r1; ++it) {
    if (it->col >= item.c0 && it->col < item.c1) sel.coords.push_back(*it);
  }
  sel.is_core.assign(sel.coords.size(), 1);
  item.sel = dilate_halo(sel, halo);
  return item;
}

namespace {

void add_into(std::vector<ParamRef> dst, const std::vector<ParamRef>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].data.size(); ++j) dst[i].data[j] += src[i].data[j];
  }
}

Model zeros_like(const Model& m) {
  return {m.refiner_cfg, RefinerParams::zeros(m.refiner_cfg),
          FusionParams::zeros(m.refiner_cfg.geo_channels, m.fusion.hidden)};
}

std::vector<ParamRef> all_params(Model& m) {
  std::vector<ParamRef> out = m.refiner.parameters();
  for (ParamRef& p : m.fusion.parameters()) out.push_back(std::move(p));
  return out;
}

}  // namespace

LossReport batch_loss(const Model& model, const std::vector<CropItem>& items, Model* grads) {
  const int C = model.refiner_cfg.geo_channels;
  std::size_t n = 0;
  for (const CropItem& it : items) {
    for (std::size_t i = 0; i < it.sel.size(); ++i) {
      const Coord p = it.sel.coords[i];
      n += it.sel.is_core[i] && it.scene->mask.valid(p.row, p.col);
    }
  }
  if (n == 0) throw EmptyEvaluation("batch_loss: no valid core pixel in the batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grads) *grads = zeros_like(model);

  double abs_sum = 0.0, sq_sum = 0.0, win_sq = 0.0;
  std::size_t win_count = 0;
  std::vector<double> upstream(static_cast<std::size_t>(C));
  for (const CropItem& it : items) {
    const TrainingScene& s = *it.scene;
    const DenseMap& coarse = s.inputs.coarse_hr;
    for (int r = it.r0; r < it.r1; ++r) {
      for (int c = it.c0; c < it.c1; ++c) {
        if (!s.mask.valid(r, c)) continue;
        for (int ch = 0; ch < C; ++ch) {
          const double e = coarse.at(r, c, ch) - s.gt.at(r, c, ch);
          win_sq += e * e;
        }
        ++win_count;
      }
    }
    if (it.sel.core_count() == 0) continue;

    const SparseTensor x = assemble_sparse_input(it.sel, s.rgb, coarse, s.inputs.entropy_hr);
    RefinerTape tape;
    const SparseTensor out =
        run_refiner(x, model.refiner, model.refiner_cfg, nullptr, grads ? &tape : nullptr);
    SparseTensor up(out.coordinates_ptr(), out.channels());

    for (std::size_t i = 0; i < it.sel.size(); ++i) {
      const Coord p = it.sel.coords[i];
      if (!it.sel.is_core[i] || !s.mask.valid(p.row, p.col)) continue;
      const auto row = out.row(i);
      const auto delta = row.first(static_cast<std::size_t>(C));
      const auto logits = row.subspan(static_cast<std::size_t>(C));
      const double hd = normalized_entropy(logits);
      const double hc = s.inputs.entropy_hr.at(p.row, p.col);
      const auto cp = coarse.pixel(p.row, p.col);
      const GateOutput g = gated_fuse(cp, delta, hc, hd, model.fusion);
      for (int ch = 0; ch < C; ++ch) {
        const double e = g.value[static_cast<std::size_t>(ch)] - s.gt.at(p.row, p.col, ch);
        const double e0 = cp[static_cast<std::size_t>(ch)] - s.gt.at(p.row, p.col, ch);
        abs_sum += std::abs(e);
        sq_sum += e * e;
        win_sq += e * e - e0 * e0;
        upstream[static_cast<std::size_t>(ch)] = e > 0.0 ? inv_n : e < 0.0 ? -inv_n : 0.0;
      }
      if (!grads) continue;
      const GateGrads gg =
          fusion_backward(cp, delta, hc, hd, model.fusion, upstream, grads->fusion);
      auto urow = up.mutable_row(i);
      std::copy(gg.delta.begin(), gg.delta.end(), urow.begin());
      normalized_entropy_backward(logits, gg.h_delta, urow.subspan(static_cast<std::size_t>(C)));
    }
    if (grads) {
      RefinerGrads rg = refiner_backward(tape, model.refiner, model.refiner_cfg, up);
      add_into(grads->refiner.parameters(), rg.params.parameters());
    }
  }
  LossReport rep;
  rep.per_pixel_count = n;
  rep.total = abs_sum * inv_n;
  rep.selected_rmse = std::sqrt(sq_sum * inv_n);
  rep.full_rmse = std::sqrt(std::max(0.0, win_sq) / static_cast<double>(win_count));
  return rep;
}

TrainResult train(const std::vector<TrainingScene>& scenes, const TrainConfig& cfg, Model init,
                  const std::function<void(const LossPoint&)>& on_step) {
  cfg.validate();
  init.check();
  if (scenes.empty()) throw InvalidArgument("train: no scenes");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!scenes[i].core.empty()) usable.push_back(i);
  }
  if (usable.empty()) throw InvalidInput("train: no scene has a pixel above the entropy threshold");

  TrainResult res{std::move(init), {}};
  std::vector<ParamRef> params = all_params(res.model);
  std::vector<std::vector<double>> m1, m2;
  for (const ParamRef& p : params) {
    m1.emplace_back(p.data.size(), 0.0);
    m2.emplace_back(p.data.size(), 0.0);
  }

  Random rng(cfg.seed);
  double b1t = 1.0, b2t = 1.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<CropItem> items;
    for (int b = 0; b < cfg.batch; ++b) {
      const TrainingScene& s =
          scenes[usable[static_cast<std::size_t>(rng.integer(0, static_cast<int>(usable.size()) - 1))]];
      const Coord centre = s.core[static_cast<std::size_t>(
          rng.integer(0, static_cast<int>(s.core.size()) - 1))];
      items.push_back(make_crop(s, centre, cfg.crop, cfg.halo));
    }
    Model g;
    const LossReport rep = batch_loss(res.model, items, &g);
    if (!std::isfinite(rep.total)) {
      throw Divergence("train: loss is not finite at step " + std::to_string(step));
    }
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const std::vector<ParamRef> gp = all_params(g);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t j = 0; j < params[k].data.size(); ++j) {
        const double gj = gp[k].data[j];
        if (!std::isfinite(gj)) {
          throw Divergence("train: gradient of " + params[k].name + " is not finite at step " +
                           std::to_string(step));
        }
        double& a = m1[k][j];
        double& v = m2[k][j];
        a = cfg.beta1 * a + (1.0 - cfg.beta1) * gj;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * gj * gj;
        const double mhat = a / (1.0 - b1t);
        const double vhat = v / (1.0 - b2t);
        const double update = cfg.learn_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        if (update != 0.0) params[k].data[j] -= update;
      }
    }
    const LossPoint pt{step, rep.total, rep.selected_rmse, rep.full_rmse};
    res.curve.push_back(pt);
    if (on_step) on_step(pt);
  }
  return res;
}

std::string loss_curve_csv(const std::vector<LossPoint>& curve) {
  std::ostringstream out;
  out << "step,total,selected_rmse,full_rmse\n" << std::setprecision(17);
  for (const LossPoint& p : curve) {
    out << p.step << ',' << p.total << ',' << p.selected_rmse << ',' << p.full_rmse << '\n';
  }
  return out.str();
}

double fit_gate_bias(const std::vector<GateSample>& samples, FusionParams params, int steps,
                     double learn_rate) {
  if (samples.empty()) throw InvalidArgument("fit_gate_bias: no samples");
  if (steps < 1) throw InvalidArgument("fit_gate_bias: steps must be >= 1");
  params.check(static_cast<int>(samples[0].coarse.size()));
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  double m = 0.0, v = 0.0, b1t = 1.0, b2t = 1.0;
  for (int step = 0; step < steps; ++step) {
    FusionParams g = FusionParams::zeros(params.geo_channels, params.hidden);
    for (const GateSample& s : samples) {
      const GateOutput out = gated_fuse(s.coarse, s.delta, s.h_coarse, s.h_delta, params);
      std::vector<double> up(out.value.size());
      for (std::size_t c = 0; c < up.size(); ++c) up[c] = 2.0 * (out.value[c] - s.gt[c]) * inv_n;
      fusion_backward(s.coarse, s.delta, s.h_coarse, s.h_delta, params, up, g);
    }
    b1t *= 0.9;
    b2t *= 0.999;
    m = 0.9 * m + 0.1 * g.b2[0];
    v = 0.999 * v + 0.001 * g.b2[0] * g.b2[0];
    params.b2[0] -= learn_rate * (m / (1.0 - b1t)) / (std::sqrt(v / (1.0 - b2t)) + 1e-12);
  }
  return params.b2[0];
}

// ---------------------------------------------------------------------------
// Finite-difference checks

double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + 1e-2);
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const GradCheckEntry& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::string GradCheckReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(3) << std::scientific;
  for (const GradCheckEntry& e : entries) {
    out << std::left << std::setw(20) << e.layer << " max_rel_error=" << e.max_rel_error
        << " checked=" << e.checked << '\n';
  }
  return out.str();
}

namespace {

constexpr double kStep = 1e-4;

struct Tally {
  GradCheckEntry entry;
  void add(double analytic, double numeric) {
    entry.max_rel_error = std::max(entry.max_rel_error, grad_rel_error(analytic, numeric));
    ++entry.checked;
  }
};

// Central difference of f with respect to *x.
template <typename F>
double central(double* x, const F& f) {
  const double keep = *x;
  *x = keep + kStep;
  const double up = f();
  *x = keep - kStep;
  const double down = f();
  *x = keep;
  return (up - down) / (2.0 * kStep);
}

double weighted(const SparseTensor& y, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += y.feats()[i] * r[i];
  return s;
}

std::vector<double> draws(Random& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

CoordinateSetPtr random_sites(Random& rng, int count, int extent) {
  std::vector<Coord> c;
  while (static_cast<int>(c.size()) < count) {
    const Coord p{rng.integer(0, extent - 1), rng.integer(0, extent - 1)};
    if (std::find(c.begin(), c.end(), p) == c.end()) c.push_back(p);
  }
  std::sort(c.begin(), c.end());
  return make_coordinate_set(std::move(c), 1);
}

ConvParams random_conv(Random& rng, int k, int cin, int cout) {
  ConvParams p = ConvParams::zeros(k, cin, cout);
  for (double& w : p.weights) w = rng.uniform(-0.5, 0.5);
  for (double& b : p.bias) b = rng.uniform(-0.5, 0.5);
  return p;
}

GradCheckEntry check_conv(Random& rng, const std::string& name, int k, int mode) {
  // mode 0: stride 1, 1: stride 2, 2: transposed
  Tally t{{name, 0.0, 0}};
  for (int trial = 0; trial < 3; ++trial) {
    const CoordinateSetPtr fine = random_sites(rng, 9, 6);
    CoordinateSetPtr in = fine, out = fine;
    if (mode == 1) out = downsample_coords(*fine);
    if (mode == 2) in = downsample_coords(*fine);
    const KernelMap km = mode == 2 ? build_transposed_kernel_map(in, out, k)
                                   : build_kernel_map(in, out, k, mode == 1 ? 2 : 1);
    const int cin = 3, cout = 2;
    SparseTensor x(in, cin, draws(rng, in->size() * cin, -1.0, 1.0));
    ConvParams p = random_conv(rng, k, cin, cout);
    const std::vector<double> r = draws(rng, out->size() * cout, -1.0, 1.0);
    const SparseTensor ry(out, cout, r);
    const ConvGrads g = sparse_conv_backward(x, p, km, ry);
    const auto loss = [&] { return weighted(sparse_conv(x, p, km), r); };
    for (std::size_t j = 0; j < p.weights.size(); ++j) {
      t.add(g.params.weights[j], central(&p.weights[j], loss));
    }
    for (std::size_t j = 0; j < p.bias.size(); ++j) t.add(g.params.bias[j], central(&p.bias[j], loss));
    auto xf = x.mutable_feats();
    for (std::size_t j = 0; j < xf.size(); ++j) t.add(g.input.feats()[j], central(&xf[j], loss));
  }
  return t.entry;
}

GradCheckEntry check_site_norm(Random& rng) {
  Tally t{{"site_norm", 0.0, 0}};
  for (int trial = 0; trial < 3; ++trial) {
    const CoordinateSetPtr sites = random_sites(rng, 8, 5);
    const int C = 3;
    SparseTensor x(sites, C, draws(rng, sites->size() * C, -1.0, 1.0));
    std::vector<double> scale = draws(rng, C, 0.5, 1.5);
    std::vector<double> shift = draws(rng, C, -0.5, 0.5);
    SiteNormCache cache;
    site_norm(x, scale, shift, &cache);
    bool degenerate = false;
    for (double inv : cache.inv_std) degenerate |= 1.0 / (inv * inv) - kSiteNormEps < 1e-2;
    if (degenerate) {
      --trial;
      continue;
    }
    const std::vector<double> r = draws(rng, sites->size() * C, -1.0, 1.0);
    const SiteNormGrads g = site_norm_backward(cache, scale, SparseTensor(sites, C, r));
    const auto loss = [&] { return weighted(site_norm(x, scale, shift), r); };
    for (int c = 0; c < C; ++c) {
      t.add(g.scale[static_cast<std::size_t>(c)], central(&scale[static_cast<std::size_t>(c)], loss));
      t.add(g.shift[static_cast<std::size_t>(c)], central(&shift[static_cast<std::size_t>(c)], loss));
    }
    auto xf = x.mutable_feats();
    for (std::size_t j = 0; j < xf.size(); ++j) t.add(g.input.feats()[j], central(&xf[j], loss));
  }
  return t.entry;
}

// Two sites a, b: y_a = s * d / sqrt(d^2 + eps) + shift with d = (a - b) / 2,
// so dy_a/da = -dy_a/db = s * 0.5 * eps / (d^2 + eps)^1.5 and y_b mirrors it.
GradCheckEntry check_site_norm_jacobian(Random& rng) {
  Tally t{{"site_norm_2site", 0.0, 0}};
  for (int trial = 0; trial < 5; ++trial) {
    const double a = rng.uniform(-1.0, 1.0);
    const double b = a + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1e-3, 0.05);
    const double s = rng.uniform(0.5, 1.5);
    const auto sites = make_coordinate_set({{0, 0}, {0, 1}}, 1);
    const SparseTensor x(sites, 1, {a, b});
    const std::vector<double> scale{s}, shift{0.3};
    SiteNormCache cache;
    site_norm(x, scale, shift, &cache);
    const double d = 0.5 * (a - b);
    const double k = s * 0.5 * kSiteNormEps / std::pow(d * d + kSiteNormEps, 1.5);
    const double jac[2][2] = {{k, -k}, {-k, k}};  // jac[out][in]
    for (int o = 0; o < 2; ++o) {
      std::vector<double> up{0.0, 0.0};
      up[static_cast<std::size_t>(o)] = 1.0;
      const SiteNormGrads g = site_norm_backward(cache, scale, SparseTensor(sites, 1, up));
      for (int i = 0; i < 2; ++i) t.add(g.input.feats()[static_cast<std::size_t>(i)], jac[o][i]);
    }
  }
  return t.entry;
}

GradCheckEntry check_relu(Random& rng) {
  Tally t{{"relu", 0.0, 0}};
  const CoordinateSetPtr sites = random_sites(rng, 10, 5);
  const int C = 4;
  // Magnitudes at least 100 steps away from the kink.
  std::vector<double> v(sites->size() * C);
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(100.0 * kStep, 1.0);
  SparseTensor x(sites, C, v);
  const std::vector<double> r = draws(rng, v.size(), -1.0, 1.0);
  const SparseTensor g = relu_backward(relu(x), SparseTensor(sites, C, r));
  const auto loss = [&] { return weighted(relu(x), r); };
  auto xf = x.mutable_feats();
  for (std::size_t j = 0; j < xf.size(); ++j) t.add(g.feats()[j], central(&xf[j], loss));
  return t.entry;
}

GradCheckEntry check_entropy(Random& rng) {
  Tally t{{"entropy", 0.0, 0}};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> z = draws(rng, 4, -2.0, 2.0);
    std::vector<double> g(4, 0.0);
    normalized_entropy_backward(z, 1.0, g);
    for (std::size_t j = 0; j < 4; ++j) t.add(g[j], central(&z[j], [&] { return normalized_entropy(z); }));
  }
  return t.entry;
}

double min_hidden_preactivation(const FusionParams& p, std::span<const double> coarse,
                                std::span<const double> delta, double hc, double hd) {
  std::vector<double> z(coarse.begin(), coarse.end());
  z.insert(z.end(), delta.begin(), delta.end());
  z.push_back(hc);
  z.push_back(hd);
  double lo = 1e300;
  for (int j = 0; j < p.hidden; ++j) {
    double a = p.b1[static_cast<std::size_t>(j)];
    for (std::size_t i = 0; i < z.size(); ++i) a += p.w1[i * static_cast<std::size_t>(p.hidden) + j] * z[i];
    lo = std::min(lo, std::abs(a));
  }
  return lo;
}

GradCheckEntry check_gate(Random& rng) {
  Tally t{{"gate", 0.0, 0}};
  const int C = 3;
  for (int trial = 0; trial < 5; ++trial) {
    FusionParams p = FusionParams::initialize(C, rng.bits(), 8);
    std::vector<double> coarse = draws(rng, C, 1.0, 3.0);
    std::vector<double> delta = draws(rng, C, -0.5, 0.5);
    double hc = rng.uniform(0.1, 0.9), hd = rng.uniform(0.1, 0.9);
    if (min_hidden_preactivation(p, coarse, delta, hc, hd) < 1e-2) {
      --trial;
      continue;
    }
    const std::vector<double> r = draws(rng, C, -1.0, 1.0);
    FusionParams pg = FusionParams::zeros(C, p.hidden);
    const GateGrads g = fusion_backward(coarse, delta, hc, hd, p, r, pg);
    const auto loss = [&] {
      const GateOutput o = gated_fuse(coarse, delta, hc, hd, p);
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += o.value[static_cast<std::size_t>(c)] * r[static_cast<std::size_t>(c)];
      return s;
    };
    auto refs = p.parameters();
    auto grefs = pg.parameters();
    for (std::size_t k = 0; k < refs.size(); ++k) {
      for (std::size_t j = 0; j < refs[k].data.size(); ++j) {
        t.add(grefs[k].data[j], central(&refs[k].data[j], loss));
      }
    }
    for (int c = 0; c < C; ++c) {
      t.add(g.coarse[static_cast<std::size_t>(c)], central(&coarse[static_cast<std::size_t>(c)], loss));
      t.add(g.delta[static_cast<std::size_t>(c)], central(&delta[static_cast<std::size_t>(c)], loss));
    }
    t.add(g.h_coarse, central(&hc, loss));
    t.add(g.h_delta, central(&hd, loss));
  }
  return t.entry;
}

RefinerConfig tiny_config() {
  RefinerConfig cfg;
  cfg.geo_channels = 1;
  cfg.channels = {4};
  cfg.conf_logits = 4;
  return cfg;
}

void randomize(Random& rng, RefinerParams& p, double head_scale) {
  for (const ParamRef& r : p.parameters()) {
    const bool head = r.name.rfind("head.", 0) == 0;
    const bool scale = r.name.find("norm.scale") != std::string::npos;
    for (double& v : r.data) {
      v = scale ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5) * (head ? head_scale : 1.0);
    }
  }
}

GradCheckEntry check_refiner(Random& rng) {
  Tally t{{"refiner", 0.0, 0}};
  const RefinerConfig cfg = tiny_config();
  for (int trial = 0; trial < 3; ++trial) {
    const CoordinateSetPtr sites = random_sites(rng, 10, 4);
    const SparseTensor x(sites, cfg.in_channels(), draws(rng, sites->size() * cfg.in_channels(), -1.0, 1.0));
    RefinerParams p = RefinerParams::zeros(cfg);
    randomize(rng, p, 1.0);
    RefinerTape tape;
    run_refiner(x, p, cfg, nullptr, &tape);
    if (min_norm_variance(tape) < 1e-2) {
      --trial;
      continue;
    }
    const std::vector<double> r = draws(rng, sites->size() * cfg.out_channels(), -1.0, 1.0);
    const RefinerGrads g = refiner_backward(tape, p, cfg, SparseTensor(sites, cfg.out_channels(), r));
    SparseTensor xv = x;
    const auto loss = [&] { return weighted(run_refiner(xv, p, cfg), r); };
    auto refs = p.parameters();
    auto grefs = g.params.parameters();
    for (std::size_t k = 0; k < refs.size(); ++k) {
      for (std::size_t j = 0; j < refs[k].data.size(); ++j) {
        t.add(grefs[k].data[j], central(&refs[k].data[j], loss));
      }
    }
    auto xf = xv.mutable_feats();
    for (std::size_t j = 0; j < xf.size(); ++j) t.add(g.input.feats()[j], central(&xf[j], loss));
  }
  return t.entry;
}

// Ten-site instance: six core pixels and a four-pixel halo on an 8x8 scene.
GradCheckEntry check_end_to_end(Random& rng) {
  Tally t{{"end_to_end_loss", 0.0, 0}};
  const RefinerConfig cfg = tiny_config();
  const int H = 8, W = 8;
  for (int trial = 0; trial < 2; ++trial) {
    std::vector<double> gt = draws(rng, H * W, 1.0, 3.0);
    std::vector<double> coarse(gt.size());
    // Coarse errors of at least 0.5 keep |fused - gt| away from the L1 kink.
    for (std::size_t i = 0; i < gt.size(); ++i) {
      coarse[i] = gt[i] + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0);
    }
    TrainingScene s{DenseMap(H, W, 3, MapKind::kRgb, draws(rng, H * W * 3, 0.0, 1.0)),
                    DenseMap(H, W, 1, MapKind::kDepth, gt),
                    ValidityMask::all_valid(H, W),
                    {DenseMap(H, W, 1, MapKind::kDepth, coarse),
                     DenseMap(H, W, 1, MapKind::kEntropy, draws(rng, H * W, 0.3, 1.0))},
                    {}};
    CropItem item;
    item.scene = &s;
    item.r1 = H;
    item.c1 = W;
    item.sel.height = H;
    item.sel.width = W;
    for (int c = 2; c <= 6; ++c) {
      for (int r = 2; r <= 3; ++r) item.sel.coords.push_back({r, c});
    }
    std::sort(item.sel.coords.begin(), item.sel.coords.end());
    for (const Coord& c : item.sel.coords) item.sel.is_core.push_back(c.col != 2 && c.col != 6);
    const std::vector<CropItem> items{item};

    Model m{cfg, RefinerParams::zeros(cfg), FusionParams::initialize(1, rng.bits(), 8)};
    randomize(rng, m.refiner, 0.1);
    RefinerTape tape;
    run_refiner(assemble_sparse_input(item.sel, s.rgb, s.inputs.coarse_hr, s.inputs.entropy_hr),
                m.refiner, cfg, nullptr, &tape);
    if (min_norm_variance(tape) < 1e-2) {
      --trial;
      continue;
    }
    Model g;
    batch_loss(m, items, &g);
    const auto loss = [&] { return batch_loss(m, items).total; };
    auto refs = all_params(m);
    auto grefs = all_params(g);
    for (std::size_t k = 0; k < refs.size(); ++k) {
      for (std::size_t j = 0; j < refs[k].data.size(); ++j) {
        t.add(grefs[k].data[j], central(&refs[k].data[j], loss));
      }
    }
  }
  return t.entry;
}

}  // namespace

GradCheckReport grad_check_all(std::uint64_t seed) {
  Random rng(seed);
  GradCheckReport rep;
  rep.entries.push_back(check_conv(rng, "linear1x1", 1, 0));
  rep.entries.push_back(check_conv(rng, "conv3x3", 3, 0));
  rep.entries.push_back(check_conv(rng, "conv3x3_stride2", 3, 1));
  rep.entries.push_back(check_conv(rng, "transposed3x3", 3, 2));
  rep.entries.push_back(check_site_norm(rng));
  rep.entries.push_back(check_site_norm_jacobian(rng));
  rep.entries.push_back(check_relu(rng));
  rep.entries.push_back(check_entropy(rng));
  rep.entries.push_back(check_gate(rng));
  rep.entries.push_back(check_refiner(rng));
  rep.entries.push_back(check_end_to_end(rng));
  return rep;
}

}  // namespace retrofit

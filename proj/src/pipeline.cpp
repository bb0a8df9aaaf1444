#include "retrofit/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "retrofit/entropy.hpp"
#include "retrofit/error.hpp"
#include "retrofit/metrics.hpp"
#include "retrofit/resample.hpp"

namespace retrofit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void fill_fractions(Diagnostics& d, const PixelSelection& sel) {
  const double n = static_cast<double>(sel.height) * sel.width;
  d.core_count = sel.core_count();
  d.halo_count = sel.halo_count();
  d.selected_fraction = static_cast<double>(d.core_count) / n;
  d.halo_fraction = static_cast<double>(d.halo_count) / n;
}

}  // namespace

std::string_view to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::kEntropy: return "entropy";
    case SelectorKind::kTopK: return "topk";
    case SelectorKind::kRandom: return "random";
    case SelectorKind::kEdge: return "edge";
  }
  return "?";
}

SelectorKind parse_selector(std::string_view name) {
  for (SelectorKind k : {SelectorKind::kEntropy, SelectorKind::kTopK, SelectorKind::kRandom,
                         SelectorKind::kEdge}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown selector '" + std::string(name) + "'");
}

PreparedInputs prepare_inputs(const BackboneOutput& backbone, int height, int width,
                              StageTimes* times) {
  validate_backbone(backbone);
  auto t0 = Clock::now();
  DenseMap coarse = upsample_nearest(backbone.coarse_lr, height, width);
  if (times) times->upsample = seconds_since(t0);
  // Entropy is a per-pixel function, so scoring the LR logits and
  // upsampling gives the same bits as scoring the upsampled logits.
  t0 = Clock::now();
  DenseMap entropy = upsample_nearest(compute_entropy(backbone.logits_lr), height, width);
  if (times) times->entropy = seconds_since(t0);
  return {std::move(coarse), std::move(entropy)};
}

PixelSelection choose_pixels(const PreparedInputs& in, const DenseMap& rgb,
                             const PipelineConfig& cfg) {
  const int h = in.coarse_hr.height();
  const int w = in.coarse_hr.width();
  switch (cfg.selector) {
    case SelectorKind::kEntropy: return select_entropy(in.entropy_hr, cfg.alpha);
    case SelectorKind::kTopK: return select_top_fraction(in.entropy_hr, cfg.budget);
    case SelectorKind::kRandom: return select_random(h, w, cfg.budget, cfg.selector_seed);
    case SelectorKind::kEdge: return select_edge(rgb, cfg.budget);
  }
  throw InvalidArgument("unknown selector");
}

PipelineResult run_with_selection(const DenseMap& rgb, PreparedInputs inputs,
                                  PixelSelection selection, const Model& model,
                                  FusionStrategy strategy, Diagnostics diag) {
  model.check();
  if (model.refiner_cfg.geo_channels != inputs.coarse_hr.channels()) {
    throw InvalidArgument("model expects " + std::to_string(model.refiner_cfg.geo_channels) +
                          " geometry channels, coarse map has " +
                          std::to_string(inputs.coarse_hr.channels()));
  }
  const auto t_start = Clock::now();
  fill_fractions(diag, selection);

  PipelineResult res{inputs.coarse_hr, std::move(inputs), std::move(selection), {},
                     std::move(diag)};
  if (res.selection.core_count() == 0) {
    res.diag.seconds.total += seconds_since(t_start);
    return res;
  }

  auto t0 = Clock::now();
  SparseTensor x = assemble_sparse_input(res.selection, rgb, res.inputs.coarse_hr,
                                         res.inputs.entropy_hr);
  res.diag.seconds.assemble = seconds_since(t0);

  t0 = Clock::now();
  RefinerStats stats;
  SparseTensor refined = run_refiner(x, model.refiner, model.refiner_cfg, &stats);
  res.diag.seconds.refine = seconds_since(t0);
  res.diag.madds = stats.madds;
  res.diag.kernel_pairs = stats.kernel_pairs;
  res.diag.sites_per_level = stats.sites_per_level;

  t0 = Clock::now();
  FusedMap fused = apply_fusion_to_map(res.inputs.coarse_hr, res.selection, refined,
                                       res.inputs.entropy_hr, model.fusion, strategy);
  res.diag.seconds.fuse = seconds_since(t0);
  res.output = std::move(fused.map);
  res.gate_weights = std::move(fused.weights);
  res.diag.seconds.total += seconds_since(t_start);
  return res;
}

PipelineResult run_pipeline(const DenseMap& rgb, const BackboneOutput& backbone,
                            const Model& model, const PipelineConfig& cfg) {
  if (cfg.halo < 0) throw InvalidArgument("halo radius must be >= 0");
  const auto t_start = Clock::now();
  Diagnostics diag;
  PreparedInputs in = prepare_inputs(backbone, rgb.height(), rgb.width(), &diag.seconds);
  auto t0 = Clock::now();
  PixelSelection sel = dilate_halo(choose_pixels(in, rgb, cfg), cfg.halo);
  diag.seconds.select = seconds_since(t0);
  diag.seconds.total = seconds_since(t_start);
  return run_with_selection(rgb, std::move(in), std::move(sel), model, cfg.strategy,
                            std::move(diag));
}

PipelineResult run_dense_baseline(const DenseMap& rgb, const BackboneOutput& backbone,
                                  const Model& model, FusionStrategy strategy) {
  const auto t_start = Clock::now();
  Diagnostics diag;
  PreparedInputs in = prepare_inputs(backbone, rgb.height(), rgb.width(), &diag.seconds);
  auto t0 = Clock::now();
  PixelSelection all = select_top_fraction(in.entropy_hr, 1.0);
  diag.seconds.select = seconds_since(t0);
  diag.seconds.total = seconds_since(t_start);
  return run_with_selection(rgb, std::move(in), std::move(all), model, strategy,
                            std::move(diag));
}

MetricReport selected_depth_metrics(const DenseMap& pred, const DenseMap& gt,
                                    const ValidityMask& mask, const PixelSelection& sel) {
  if (!mask.matches(pred) || sel.height != pred.height() || sel.width != pred.width()) {
    throw InvalidArgument("selection, mask and map dimensions differ");
  }
  ValidityMask core(pred.height(), pred.width(), false);
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const Coord c = sel.coords[i];
    if (sel.is_core[i] && mask.valid(c.row, c.col)) core.set(c.row, c.col, true);
  }
  return depth_metrics(pred, gt, core);
}

double full_rmse(const DenseMap& pred, const DenseMap& gt, const ValidityMask& mask) {
  return geometry_rmse(pred, gt, mask);
}

}  // namespace retrofit

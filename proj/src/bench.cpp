#include "retrofit/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>

#include "retrofit/error.hpp"
#include "retrofit/metrics.hpp"

namespace retrofit {

std::vector<EvalScene> make_eval_scenes(std::uint64_t first_seed, int count,
                                        const SceneConfig& scene_cfg,
                                        const BackboneConfig& backbone_cfg) {
  std::vector<EvalScene> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    SceneSample s = synth_scene(seed, scene_cfg);
    BackboneConfig bc = backbone_cfg;
    bc.seed = backbone_cfg.seed + seed;
    BackboneOutput b = synthetic_backbone(s, bc);
    out.push_back({std::move(s), std::move(b)});
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

// Skips NaN entries (scenes where a setting selected nothing).
double mean(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    s += x;
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

template <typename Run>
BenchRow time_rows(const std::string& setting, std::optional<double> alpha, const EvalScene& s,
                   const BenchConfig& cfg, const Run& run) {
  BenchRow row;
  row.setting = setting;
  row.alpha = alpha;
  std::vector<double> total, refine;
  for (int i = 0; i < cfg.warmup + cfg.runs; ++i) {
    const PipelineResult r = run();
    if (i < cfg.warmup) continue;
    total.push_back(r.diag.seconds.total);
    refine.push_back(r.diag.seconds.refine);
    if (total.size() == 1) {
      row.madds = r.diag.madds;
      row.kernel_pairs = r.diag.kernel_pairs;
      row.selected_fraction = r.diag.selected_fraction;
      row.halo_fraction = r.diag.halo_fraction;
      row.full_rmse = full_rmse(r.output, s.scene.gt_geo, s.scene.mask);
      if (r.output.channels() == 1) {
        const MetricReport m = depth_metrics(r.output, s.scene.gt_geo, s.scene.mask);
        row.abs_rel = m.abs_rel;
        row.delta_half = m.delta_half;
      }
    }
  }
  row.median_seconds = median(total);
  row.median_refine_seconds = median(refine);
  return row;
}

}  // namespace

const BenchRow* BenchReport::find(const std::string& setting) const {
  for (const BenchRow& r : rows) {
    if (r.setting == setting) return &r;
  }
  return nullptr;
}

std::string BenchReport::to_text() const {
  std::ostringstream out;
  out << "scene " << height << "x" << width << "\n";
  out << std::left << std::setw(12) << "setting" << std::right << std::setw(12) << "median_s"
      << std::setw(12) << "refine_s" << std::setw(16) << "madds" << std::setw(10) << "sel_frac"
      << std::setw(10) << "halo_frac" << std::setw(12) << "full_rmse" << std::setw(10) << "abs_rel"
      << "\n";
  for (const BenchRow& r : rows) {
    out << std::left << std::setw(12) << r.setting << std::right << std::fixed
        << std::setprecision(5) << std::setw(12) << r.median_seconds << std::setw(12)
        << r.median_refine_seconds << std::setw(16) << r.madds << std::setprecision(4)
        << std::setw(10) << r.selected_fraction << std::setw(10) << r.halo_fraction
        << std::setprecision(5) << std::setw(12) << r.full_rmse << std::setw(10)
        << (r.abs_rel ? *r.abs_rel : std::nan("")) << "\n";
  }
  return out.str();
}

BenchReport bench(const EvalScene& s, const Model& model, const BenchConfig& cfg) {
  if (cfg.runs < 1 || cfg.warmup < 0) throw InvalidArgument("bench: need runs >= 1, warmup >= 0");
  BenchReport rep;
  rep.height = s.scene.rgb.height();
  rep.width = s.scene.rgb.width();
  for (double a : cfg.alphas) {
    PipelineConfig pc;
    pc.alpha = a;
    pc.halo = cfg.halo;
    pc.strategy = cfg.strategy;
    std::ostringstream name;
    name << "alpha=" << a;
    rep.rows.push_back(time_rows(name.str(), a, s, cfg, [&] {
      return run_pipeline(s.scene.rgb, s.backbone, model, pc);
    }));
  }
  if (cfg.dense) {
    rep.rows.push_back(time_rows("dense", std::nullopt, s, cfg, [&] {
      return run_dense_baseline(s.scene.rgb, s.backbone, model, cfg.strategy);
    }));
  }
  return rep;
}

double AblationRow::mean_full_rmse() const { return mean(full_rmse); }
double AblationRow::mean_selected_rmse() const { return mean(selected_rmse); }
double AblationRow::mean_seconds() const { return mean(seconds); }
double AblationRow::mean_selected_fraction() const { return mean(selected_fraction); }

const AblationRow* AblationReport::find(const std::string& axis, const std::string& setting) const {
  for (const AblationRow& r : rows) {
    if (r.axis == axis && r.setting == setting) return &r;
  }
  return nullptr;
}

std::string AblationReport::to_text() const {
  std::ostringstream out;
  out << std::left << std::setw(11) << "axis" << std::setw(12) << "setting" << std::right
      << std::setw(12) << "full_rmse" << std::setw(12) << "sel_rmse" << std::setw(12)
      << "coarse_sel" << std::setw(10) << "sel_frac" << std::setw(12) << "seconds" << "\n";
  for (const AblationRow& r : rows) {
    out << std::left << std::setw(11) << r.axis << std::setw(12) << r.setting << std::right
        << std::fixed << std::setprecision(5) << std::setw(12) << r.mean_full_rmse()
        << std::setw(12) << r.mean_selected_rmse() << std::setw(12)
        << mean(r.coarse_selected_rmse) << std::setprecision(4) << std::setw(10)
        << r.mean_selected_fraction() << std::setprecision(5) << std::setw(12)
        << r.mean_seconds() << "\n";
  }
  return out.str();
}

AblationReport ablate(const std::vector<EvalScene>& scenes, const Model& model,
                      const AblationConfig& cfg) {
  if (scenes.empty()) throw InvalidArgument("ablate: no scenes");
  if (cfg.repeats < 1) throw InvalidArgument("ablate: repeats must be >= 1");
  AblationReport rep;
  const auto add = [&](const std::string& axis, const std::string& setting,
                       const PipelineConfig& pc) {
    AblationRow row{axis, setting, {}, {}, {}, {}, {}};
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      const EvalScene& s = scenes[k];
      PipelineConfig per = pc;
      per.selector_seed = cfg.random_seed + k;
      std::vector<double> t;
      std::optional<PipelineResult> last;
      for (int i = 0; i < cfg.repeats; ++i) {
        last.emplace(run_pipeline(s.scene.rgb, s.backbone, model, per));
        t.push_back(last->diag.seconds.total);
      }
      const PipelineResult& r = *last;
      row.seconds.push_back(median(t));
      row.full_rmse.push_back(full_rmse(r.output, s.scene.gt_geo, s.scene.mask));
      row.selected_fraction.push_back(r.diag.selected_fraction);
      if (r.diag.core_count == 0) {
        row.selected_rmse.push_back(std::nan(""));
        row.coarse_selected_rmse.push_back(std::nan(""));
      } else {
        row.selected_rmse.push_back(
            *selected_depth_metrics(depth_channel(r.output), depth_channel(s.scene.gt_geo),
                                    s.scene.mask, r.selection).rmse);
        row.coarse_selected_rmse.push_back(
            *selected_depth_metrics(depth_channel(r.inputs.coarse_hr),
                                    depth_channel(s.scene.gt_geo), s.scene.mask, r.selection)
                 .rmse);
      }
    }
    rep.rows.push_back(std::move(row));
  };

  for (SelectorKind k : {SelectorKind::kTopK, SelectorKind::kRandom, SelectorKind::kEdge}) {
    PipelineConfig pc;
    pc.selector = k;
    pc.budget = cfg.budget;
    pc.halo = cfg.halo;
    add("selector", k == SelectorKind::kTopK ? "entropy" : std::string(to_string(k)), pc);
  }
  for (FusionStrategy f : {FusionStrategy::kGated, FusionStrategy::kDirect,
                           FusionStrategy::kEntropy, FusionStrategy::kCoarseKeep}) {
    PipelineConfig pc;
    pc.alpha = cfg.alpha;
    pc.halo = cfg.halo;
    pc.strategy = f;
    add("fusion", std::string(to_string(f)), pc);
  }
  for (double a : cfg.alphas) {
    PipelineConfig pc;
    pc.alpha = a;
    pc.halo = cfg.halo;
    std::ostringstream name;
    name << a;
    add("threshold", name.str(), pc);
  }
  return rep;
}

}  // namespace retrofit

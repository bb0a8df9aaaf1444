#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "retrofit/bench.hpp"
#include "retrofit/entropy.hpp"
#include "retrofit/error.hpp"
#include "retrofit/export.hpp"
#include "retrofit/metrics.hpp"
#include "retrofit/model.hpp"
#include "retrofit/pipeline.hpp"
#include "retrofit/scene.hpp"
#include "retrofit/tensor_file.hpp"
#include "retrofit/trainer.hpp"

using namespace retrofit;
namespace fs = std::filesystem;

namespace {

struct SceneOpts {
  bool two_k = false;
  bool pointmap = false;
  int long_side = 0;  // 0: preset value
  int k_bins = 4;
  double noise = 0.01;
  int n_objects = 0;  // 0: preset value

  void attach(CLI::App* app) {
    app->add_flag("--2k", two_k, "2048x1536 scene preset (backbone long side 256)");
    app->add_flag("--pointmap", pointmap, "pointmap geometry instead of depth");
    app->add_option("--long-side", long_side, "backbone input long side (default: preset)");
    app->add_option("--k-bins", k_bins, "backbone logit channels")->check(CLI::Range(2, 64));
    app->add_option("--noise", noise, "backbone noise, fraction of depth range");
    app->add_option("--n-objects", n_objects, "objects per scene (default: preset)");
  }
  ScenePreset preset() const {
    const GeometryKind kind = pointmap ? GeometryKind::kPointmap : GeometryKind::kDepth;
    ScenePreset p = two_k ? preset_2k(kind) : desk_preset(kind);
    if (long_side > 0) p.backbone.long_side = long_side;
    if (n_objects > 0) p.scene.n_objects = n_objects;
    p.backbone.k_bins = k_bins;
    p.backbone.noise_sigma = noise;
    return p;
  }
};

struct PipeOpts {
  double alpha = 0.3;
  int halo = 1;
  std::string strategy = "gated";
  std::string selector = "entropy";
  double budget = 0.1;

  void attach(CLI::App* app) {
    app->add_option("--alpha", alpha, "entropy threshold")->check(CLI::Range(0.0, 1.0));
    app->add_option("--halo", halo, "halo radius")->check(CLI::Range(0, 4));
    app->add_option("--strategy", strategy, "fusion strategy")
        ->check(CLI::IsMember({"gated", "direct", "entropy", "coarse"}));
    app->add_option("--selector", selector, "pixel selector")
        ->check(CLI::IsMember({"entropy", "topk", "random", "edge"}));
    app->add_option("--budget", budget, "pixel fraction for topk/random/edge")
        ->check(CLI::Range(0.0, 1.0));
  }
  PipelineConfig config(std::uint64_t seed) const {
    PipelineConfig c;
    c.alpha = alpha;
    c.halo = halo;
    c.strategy = parse_fusion_strategy(strategy);
    c.selector = parse_selector(selector);
    c.budget = budget;
    c.selector_seed = seed;
    return c;
  }
};

Model load_or_zero(const std::string& weights, int geo_channels) {
  if (!weights.empty()) return load_model(weights);
  RefinerConfig cfg;
  cfg.geo_channels = geo_channels;
  std::cerr << "no --weights given: using an untrained model (zero head, output = coarse)\n";
  return Model::initialize(cfg, 0);
}

Tensor mask_tensor(const ValidityMask& m) {
  return Tensor::from_u8({static_cast<std::uint32_t>(m.height()), static_cast<std::uint32_t>(m.width())},
                         m.bits());
}

ValidityMask mask_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2) throw InvalidArgument("mask tensor must be H x W");
  const auto v = t.to_i32();
  std::vector<std::uint8_t> bits(v.begin(), v.end());
  return {static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), std::move(bits)};
}

BackboneOutput load_backbone(const std::string& coarse, const std::string& logits) {
  const Tensor ct = load_tensor(coarse);
  const MapKind kind =
      ct.dims.size() == 3 && ct.dims[2] == 3 ? MapKind::kPointmap : MapKind::kDepth;
  DenseMap c = map_from_tensor(ct, kind);
  const int long_side = std::max(c.height(), c.width());
  return {std::move(c), load_map(logits, MapKind::kLogits), long_side};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string diagnostics_text(const Diagnostics& d) {
  std::ostringstream o;
  o << "core_pixels=" << d.core_count << "\nhalo_pixels=" << d.halo_count
    << "\nselected_fraction=" << d.selected_fraction << "\nhalo_fraction=" << d.halo_fraction
    << "\nkernel_pairs=" << d.kernel_pairs << "\nmadds=" << d.madds;
  for (std::size_t l = 0; l < d.sites_per_level.size(); ++l) {
    o << "\nsites_level" << l << "=" << d.sites_per_level[l];
  }
  const StageTimes& t = d.seconds;
  o << "\nseconds_upsample=" << t.upsample << "\nseconds_entropy=" << t.entropy
    << "\nseconds_select=" << t.select << "\nseconds_assemble=" << t.assemble
    << "\nseconds_refine=" << t.refine << "\nseconds_fuse=" << t.fuse
    << "\nseconds_total=" << t.total << "\n";
  return o.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-guided sparse refinement of depth maps and pointmaps"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP thread count (0: runtime default)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
  SceneOpts synth_scene_opts;
  synth_scene_opts.attach(synth);
  std::uint64_t synth_seed = 0;
  int synth_count = 1;
  std::string synth_out = "scenes";
  synth->add_option("--seed", synth_seed, "first scene seed");
  synth->add_option("--count", synth_count, "number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "output directory");

  // backbone
  auto* backbone = app.add_subcommand("backbone", "synthetic backbone or validation of external backbone files");
  SceneOpts bb_scene_opts;
  bb_scene_opts.attach(backbone);
  std::uint64_t bb_seed = 0;
  std::string bb_out = "backbone", bb_coarse, bb_logits;
  backbone->add_option("--seed", bb_seed, "scene seed to run the synthetic backbone on");
  backbone->add_option("--out", bb_out, "output directory");
  backbone->add_option("--validate-coarse", bb_coarse, "external coarse geometry TensorFile");
  backbone->add_option("--validate-logits", bb_logits, "external logits TensorFile");

  // train
  auto* train_cmd = app.add_subcommand("train", "train refiner and gate on synthetic scenes");
  SceneOpts tr_scene_opts;
  tr_scene_opts.attach(train_cmd);
  TrainConfig tc;
  int tr_scenes = 50;
  std::uint64_t tr_first = 1000, tr_init = 7;
  std::vector<int> tr_channels = {16, 32};
  std::string tr_out = "model.weights", tr_curve;
  train_cmd->add_option("--scenes", tr_scenes, "training scenes")->check(CLI::PositiveNumber);
  train_cmd->add_option("--first-seed", tr_first, "seed of the first training scene");
  train_cmd->add_option("--steps", tc.steps, "optimizer steps");
  train_cmd->add_option("--batch", tc.batch, "batch size");
  train_cmd->add_option("--lr", tc.learn_rate, "learning rate");
  train_cmd->add_option("--seed", tc.seed, "batch sampling seed");
  train_cmd->add_option("--init-seed", tr_init, "weight initialization seed");
  train_cmd->add_option("--alpha", tc.alpha, "entropy threshold for training pixels");
  train_cmd->add_option("--halo", tc.halo, "halo radius");
  train_cmd->add_option("--crop", tc.crop, "crop window side");
  train_cmd->add_option("--channels", tr_channels, "refiner channels per level")->delimiter(',');
  train_cmd->add_option("--weights", tr_out, "output weight manifest");
  train_cmd->add_option("--curve", tr_curve, "loss curve CSV path");

  // refine
  auto* refine = app.add_subcommand("refine", "run the full pipeline on one input");
  SceneOpts rf_scene_opts;
  rf_scene_opts.attach(refine);
  PipeOpts rf_pipe;
  rf_pipe.attach(refine);
  std::uint64_t rf_seed = 900000;
  std::string rf_weights, rf_out = "refined", rf_rgb, rf_coarse, rf_logits;
  refine->add_option("--seed", rf_seed, "synthetic scene seed (when no input files are given)");
  refine->add_option("--weights", rf_weights, "weight manifest");
  refine->add_option("--rgb", rf_rgb, "HR rgb TensorFile");
  refine->add_option("--coarse", rf_coarse, "LR coarse geometry TensorFile");
  refine->add_option("--logits", rf_logits, "LR logits TensorFile");
  refine->add_option("--out", rf_out, "output directory");

  // eval
  auto* eval = app.add_subcommand("eval", "metrics of a prediction against ground truth");
  std::string ev_pred, ev_gt, ev_mask;
  eval->add_option("--pred", ev_pred, "predicted map TensorFile")->required();
  eval->add_option("--gt", ev_gt, "ground-truth map TensorFile")->required();
  eval->add_option("--mask", ev_mask, "u8 validity mask TensorFile");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "sparse vs dense timing and MAdds");
  SceneOpts bn_scene_opts;
  bn_scene_opts.attach(bench_cmd);
  BenchConfig bnc;
  std::uint64_t bn_seed = 950000;
  std::string bn_weights, bn_out, bn_strategy = "gated";
  bench_cmd->add_option("--seed", bn_seed, "scene seed");
  bench_cmd->add_option("--weights", bn_weights, "weight manifest");
  bench_cmd->add_option("--warmup", bnc.warmup, "warmup runs");
  bench_cmd->add_option("--runs", bnc.runs, "measured runs");
  bench_cmd->add_option("--alphas", bnc.alphas, "thresholds")->delimiter(',');
  bench_cmd->add_option("--halo", bnc.halo, "halo radius");
  bench_cmd->add_option("--strategy", bn_strategy, "fusion strategy")
      ->check(CLI::IsMember({"gated", "direct", "entropy", "coarse"}));
  bench_cmd->add_option("--out", bn_out, "report path");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "selector, fusion and threshold sweeps");
  SceneOpts ab_scene_opts;
  ab_scene_opts.attach(ablate_cmd);
  AblationConfig abc;
  int ab_scenes = 10;
  std::uint64_t ab_first = 900000;
  std::string ab_weights, ab_out;
  ablate_cmd->add_option("--scenes", ab_scenes, "held-out scenes")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--first-seed", ab_first, "seed of the first held-out scene");
  ablate_cmd->add_option("--weights", ab_weights, "weight manifest");
  ablate_cmd->add_option("--budget", abc.budget, "selector budget");
  ablate_cmd->add_option("--alpha", abc.alpha, "threshold for the fusion axis");
  ablate_cmd->add_option("--halo", abc.halo, "halo radius");
  ablate_cmd->add_option("--alphas", abc.alphas, "threshold sweep")->delimiter(',');
  ablate_cmd->add_option("--repeats", abc.repeats, "timing repeats per scene");
  ablate_cmd->add_option("--out", ab_out, "report path");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*synth) {
      const ScenePreset p = synth_scene_opts.preset();
      fs::create_directories(synth_out);
      for (int i = 0; i < synth_count; ++i) {
        const std::uint64_t seed = synth_seed + static_cast<std::uint64_t>(i);
        const SceneSample s = synth_scene(seed, p.scene);
        const std::string stem = (fs::path(synth_out) / ("scene_" + std::to_string(seed))).string();
        save_map(stem + ".rgb.rtft", s.rgb);
        save_map(stem + ".gt.rtft", s.gt_geo);
        save_tensor(stem + ".mask.rtft", mask_tensor(s.mask));
        std::printf("%s boundary_fraction=%.4f\n", stem.c_str(),
                    boundary_fraction(depth_channel(s.gt_geo)));
      }
    } else if (*backbone) {
      const bool external = !bb_coarse.empty() || !bb_logits.empty();
      if (external && (bb_coarse.empty() || bb_logits.empty())) {
        throw InvalidArgument("--validate-coarse and --validate-logits go together");
      }
      const BackboneOutput out = [&] {
        if (external) return load_backbone(bb_coarse, bb_logits);
        ScenePreset p = bb_scene_opts.preset();
        p.backbone.seed = bb_seed;
        BackboneOutput o = synthetic_backbone(synth_scene(bb_seed, p.scene), p.backbone);
        fs::create_directories(bb_out);
        save_map(fs::path(bb_out) / "coarse.rtft", o.coarse_lr);
        save_map(fs::path(bb_out) / "logits.rtft", o.logits_lr);
        return o;
      }();
      validate_backbone(out);
      const DenseMap h = compute_entropy(out.logits_lr);
      double mean_h = 0.0;
      for (double v : h.values()) mean_h += v;
      std::printf("valid backbone output: %dx%d, %d geometry channels, %d logits, mean entropy %.4f\n",
                  out.coarse_lr.height(), out.coarse_lr.width(), out.coarse_lr.channels(),
                  out.logits_lr.channels(), mean_h / static_cast<double>(h.pixel_count()));
    } else if (*train_cmd) {
      const ScenePreset p = tr_scene_opts.preset();
      std::vector<TrainingScene> scenes;
      for (const EvalScene& e : make_eval_scenes(tr_first, tr_scenes, p.scene, p.backbone)) {
        scenes.push_back(make_training_scene(e.scene, e.backbone, tc.alpha));
      }
      RefinerConfig rc;
      rc.geo_channels = scenes.front().gt.channels();
      rc.channels = tr_channels;
      const TrainResult res = train(scenes, tc, Model::initialize(rc, tr_init), [](const LossPoint& pt) {
        if (pt.step == 1 || pt.step % 100 == 0) {
          std::printf("step %d loss %.6f selected_rmse %.6f full_rmse %.6f\n", pt.step, pt.total,
                      pt.selected_rmse, pt.full_rmse);
          std::fflush(stdout);
        }
      });
      save_model(tr_out, res.model);
      if (!tr_curve.empty()) write_text(tr_curve, loss_curve_csv(res.curve));
      std::printf("weights written to %s\n", tr_out.c_str());
    } else if (*refine) {
      std::optional<SceneSample> scene;
      std::optional<BackboneOutput> bbo;
      if (!rf_rgb.empty()) {
        if (rf_coarse.empty() || rf_logits.empty()) {
          throw InvalidArgument("--rgb needs --coarse and --logits");
        }
        bbo = load_backbone(rf_coarse, rf_logits);
      } else {
        ScenePreset p = rf_scene_opts.preset();
        p.backbone.seed = rf_seed;
        scene = synth_scene(rf_seed, p.scene);
        bbo = synthetic_backbone(*scene, p.backbone);
      }
      const BackboneOutput& bb = *bbo;
      const DenseMap rgb = scene ? scene->rgb : load_map(rf_rgb, MapKind::kRgb);
      const Model model = load_or_zero(rf_weights, bb.coarse_lr.channels());
      const PipelineResult r = run_pipeline(rgb, bb, model, rf_pipe.config(rf_seed));
      const ValidityMask all = ValidityMask::all_valid(rgb.height(), rgb.width());
      export_outputs(rf_out, "refined", r.output, scene ? scene->mask : all);
      export_outputs(rf_out, "coarse", r.inputs.coarse_hr, scene ? scene->mask : all);
      save_tensor(fs::path(rf_out) / "selection.rtft", tensor_from_selection(r.selection));
      std::string diag = diagnostics_text(r.diag);
      if (scene) {
        diag += "full_rmse_coarse=" + std::to_string(full_rmse(r.inputs.coarse_hr, scene->gt_geo, scene->mask)) +
                "\nfull_rmse_refined=" + std::to_string(full_rmse(r.output, scene->gt_geo, scene->mask)) + "\n";
      }
      write_text(fs::path(rf_out) / "diagnostics.txt", diag);
      std::fputs(diag.c_str(), stdout);
    } else if (*eval) {
      const Tensor pt = load_tensor(ev_pred);
      const MapKind kind = pt.dims.size() == 3 && pt.dims[2] == 3 ? MapKind::kPointmap : MapKind::kDepth;
      const DenseMap pred = map_from_tensor(pt, kind);
      const DenseMap gt = load_map(ev_gt, kind);
      const ValidityMask mask = ev_mask.empty() ? ValidityMask::all_valid(gt.height(), gt.width())
                                                : mask_from_tensor(load_tensor(ev_mask));
      const MetricReport m =
          kind == MapKind::kDepth
              ? depth_metrics(pred, gt, mask)
              : pointmap_metrics(points_from_map(pred, mask), points_from_map(gt, mask));
      std::fputs(m.to_text().c_str(), stdout);
    } else if (*bench_cmd) {
      ScenePreset p = bn_scene_opts.preset();
      const auto scenes = make_eval_scenes(bn_seed, 1, p.scene, p.backbone);
      bnc.strategy = parse_fusion_strategy(bn_strategy);
      const Model model = load_or_zero(bn_weights, scenes[0].scene.gt_geo.channels());
      const BenchReport rep = bench(scenes[0], model, bnc);
      std::string text = rep.to_text();
      if (const BenchRow* d = rep.find("dense")) {
        for (const BenchRow& r : rep.rows) {
          if (!r.alpha) continue;
          char line[160];
          std::snprintf(line, sizeof line, "%s: madds ratio dense/sparse %.2f, time ratio %.2f\n",
                        r.setting.c_str(), static_cast<double>(d->madds) / std::max<std::uint64_t>(r.madds, 1),
                        d->median_seconds / r.median_seconds);
          text += line;
        }
      }
      std::fputs(text.c_str(), stdout);
      if (!bn_out.empty()) write_text(bn_out, text);
    } else if (*ablate_cmd) {
      ScenePreset p = ab_scene_opts.preset();
      const auto scenes = make_eval_scenes(ab_first, ab_scenes, p.scene, p.backbone);
      const Model model = load_or_zero(ab_weights, scenes[0].scene.gt_geo.channels());
      const AblationReport rep = ablate(scenes, model, abc);
      std::fputs(rep.to_text().c_str(), stdout);
      if (!ab_out.empty()) write_text(ab_out, rep.to_text());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

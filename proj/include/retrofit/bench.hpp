#pragma once

#include <optional>
#include <string>
#include <vector>

#include "retrofit/model.hpp"
#include "retrofit/pipeline.hpp"
#include "retrofit/scene.hpp"

namespace retrofit {

struct EvalScene {
  SceneSample scene;
  BackboneOutput backbone;
};

// Held-out scenes with their synthetic backbone outputs.
std::vector<EvalScene> make_eval_scenes(std::uint64_t first_seed, int count,
                                        const SceneConfig& scene_cfg,
                                        const BackboneConfig& backbone_cfg);

double median(std::vector<double> v);

struct BenchConfig {
  int warmup = 5;
  int runs = 20;
  std::vector<double> alphas = {0.8, 0.6, 0.3, 0.1};
  int halo = 1;
  FusionStrategy strategy = FusionStrategy::kGated;
  bool dense = true;
};

struct BenchRow {
  std::string setting;                 // "alpha=0.3" or "dense"
  std::optional<double> alpha;
  double median_seconds = 0.0;         // whole pipeline
  double median_refine_seconds = 0.0;  // refiner stage only
  std::uint64_t madds = 0;
  std::uint64_t kernel_pairs = 0;
  double selected_fraction = 0.0;
  double halo_fraction = 0.0;
  double full_rmse = 0.0;
  std::optional<double> abs_rel;       // full-map depth metrics
  std::optional<double> delta_half;
};

struct BenchReport {
  int height = 0;
  int width = 0;
  std::vector<BenchRow> rows;
  const BenchRow* find(const std::string& setting) const;
  std::string to_text() const;
};

/// Sparse pipeline at every alpha plus the all-pixel dense baseline, each
/// timed over cfg.warmup + cfg.runs runs, median reported.
BenchReport bench(const EvalScene& s, const Model& model, const BenchConfig& cfg);

struct AblationRow {
  std::string axis;     // selector, fusion, threshold
  std::string setting;
  std::vector<double> full_rmse;      // per scene
  std::vector<double> selected_rmse;  // per scene, over the row's own core set
  std::vector<double> coarse_selected_rmse;
  std::vector<double> seconds;        // per scene, median of `repeats`
  std::vector<double> selected_fraction;
  double mean_full_rmse() const;
  double mean_selected_rmse() const;
  double mean_seconds() const;
  double mean_selected_fraction() const;
};

struct AblationConfig {
  double budget = 0.1;  // selector axis
  double alpha = 0.3;   // selector-independent default
  int halo = 1;
  std::vector<double> alphas = {0.8, 0.6, 0.3, 0.1};
  int repeats = 3;
  std::uint64_t random_seed = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  const AblationRow* find(const std::string& axis, const std::string& setting) const;
  std::string to_text() const;
};

/// Selector axis (entropy top-k, random, edge at equal budget), fusion axis
/// (gated, direct, entropy, coarse at cfg.alpha) and threshold axis.
AblationReport ablate(const std::vector<EvalScene>& scenes, const Model& model,
                      const AblationConfig& cfg);

}  // namespace retrofit

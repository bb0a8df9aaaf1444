#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "retrofit/dense_map.hpp"
#include "retrofit/model.hpp"
#include "retrofit/pipeline.hpp"
#include "retrofit/scene.hpp"
#include "retrofit/selector.hpp"

namespace retrofit {

struct TrainConfig {
  int steps = 2000;
  int batch = 8;
  double learn_rate = 1e-3;
  std::uint64_t seed = 0;
  double alpha = 0.3;
  int halo = 1;
  int crop = 96;  // side of the square window each batch item trains on
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct LossReport {
  double total = 0.0;  // mean over valid core pixels of sum_c |fused - gt|
  std::size_t per_pixel_count = 0;
  double selected_rmse = 0.0;
  double full_rmse = 0.0;
};

/// L1 loss on the valid core pixels of `sel`, plus selected and full-map RMSE.
///
/// Throws EmptyEvaluation when no core pixel is valid.
LossReport refine_loss(const DenseMap& fused, const DenseMap& gt, const ValidityMask& mask,
                       const PixelSelection& sel);

// Frozen inputs of one training scene; the backbone output is consumed here
// and never touched again.
struct TrainingScene {
  DenseMap rgb;
  DenseMap gt;
  ValidityMask mask;
  PreparedInputs inputs;
  std::vector<Coord> core;  // entropy > alpha, sorted
};

TrainingScene make_training_scene(const SceneSample& scene, const BackboneOutput& backbone,
                                  double alpha);

// One batch element: a selection restricted to a window of one scene.
struct CropItem {
  const TrainingScene* scene = nullptr;
  PixelSelection sel;
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;  // window, half-open
};

CropItem make_crop(const TrainingScene& scene, Coord centre, int crop, int halo);

/// Batch loss through refiner and gated fusion. When `grads` is given it
/// receives dLoss/dparams (same shapes as `model`, overwritten).
LossReport batch_loss(const Model& model, const std::vector<CropItem>& items,
                      Model* grads = nullptr);

struct LossPoint {
  int step = 0;
  double total = 0.0;
  double selected_rmse = 0.0;
  double full_rmse = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<LossPoint> curve;
};

/// Minibatch Adam on refiner and gate parameters.
///
/// Each step draws cfg.batch (scene, core pixel) pairs and trains on the
/// crop window around them. Throws Divergence naming the step when the loss
/// or a gradient is not finite.
TrainResult train(const std::vector<TrainingScene>& scenes, const TrainConfig& cfg, Model init,
                  const std::function<void(const LossPoint&)>& on_step = {});

// "step,total,selected_rmse,full_rmse" header plus one line per step.
std::string loss_curve_csv(const std::vector<LossPoint>& curve);

// Fixed coarse/delta/gt triples for the gate-bias surrogate.
struct GateSample {
  std::vector<double> coarse;
  std::vector<double> delta;
  std::vector<double> gt;
  double h_coarse = 0.0;
  double h_delta = 0.0;
};

/// Fits only the gate's output bias by Adam on the mean squared error of the
/// gated value, starting from `params` (whose other weights stay fixed).
/// Returns the fitted bias.
double fit_gate_bias(const std::vector<GateSample>& samples, FusionParams params, int steps,
                     double learn_rate);

struct GradCheckEntry {
  std::string layer;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Finite-difference report, step 1e-4, double precision.
///
/// Relative error is |a - n| / (max(|a|, |n|) + 1e-2): plain relative error
/// for gradients well above 1e-2, an absolute 1e-6 budget near zero where
/// the central difference's own O(h^2) term dominates.
struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool passed(double tol = 1e-4) const { return max_rel_error() <= tol; }
  std::string to_text() const;
};

double grad_rel_error(double analytic, double numeric);

GradCheckReport grad_check_all(std::uint64_t seed);

}  // namespace retrofit

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "retrofit/dense_map.hpp"
#include "retrofit/fusion.hpp"
#include "retrofit/metrics.hpp"
#include "retrofit/model.hpp"
#include "retrofit/scene.hpp"
#include "retrofit/selector.hpp"

namespace retrofit {

enum class SelectorKind : std::uint8_t { kEntropy, kTopK, kRandom, kEdge };

std::string_view to_string(SelectorKind k);
SelectorKind parse_selector(std::string_view name);

struct PipelineConfig {
  double alpha = 0.3;
  int halo = 1;
  FusionStrategy strategy = FusionStrategy::kGated;
  SelectorKind selector = SelectorKind::kEntropy;
  double budget = 0.1;  // fraction for the top-k, random and edge selectors
  std::uint64_t selector_seed = 0;
};

struct StageTimes {
  double upsample = 0.0;
  double entropy = 0.0;
  double select = 0.0;
  double assemble = 0.0;
  double refine = 0.0;
  double fuse = 0.0;
  double total = 0.0;
};

struct Diagnostics {
  std::size_t core_count = 0;
  std::size_t halo_count = 0;
  double selected_fraction = 0.0;
  double halo_fraction = 0.0;
  std::uint64_t kernel_pairs = 0;
  std::uint64_t madds = 0;
  std::vector<std::size_t> sites_per_level;
  StageTimes seconds;
};

// Full-resolution inputs of the refinement stage.
struct PreparedInputs {
  DenseMap coarse_hr;
  DenseMap entropy_hr;
};

PreparedInputs prepare_inputs(const BackboneOutput& backbone, int height, int width,
                              StageTimes* times = nullptr);

// Core pixels chosen by cfg.selector, without halo.
PixelSelection choose_pixels(const PreparedInputs& in, const DenseMap& rgb,
                             const PipelineConfig& cfg);

struct PipelineResult {
  DenseMap output;
  PreparedInputs inputs;
  PixelSelection selection;  // core plus halo
  std::vector<double> gate_weights;
  Diagnostics diag;
};

/// Upsample, score, select, dilate, refine and fuse.
///
/// An empty selection returns the upsampled coarse map unchanged.
PipelineResult run_pipeline(const DenseMap& rgb, const BackboneOutput& backbone,
                            const Model& model, const PipelineConfig& cfg);

// Same as run_pipeline on an explicit selection.
PipelineResult run_with_selection(const DenseMap& rgb, PreparedInputs inputs,
                                  PixelSelection selection, const Model& model,
                                  FusionStrategy strategy, Diagnostics diag = {});

// The refiner over every pixel with no halo; the reference for sparsity savings.
PipelineResult run_dense_baseline(const DenseMap& rgb, const BackboneOutput& backbone,
                                  const Model& model,
                                  FusionStrategy strategy = FusionStrategy::kGated);

// Depth metrics restricted to the core pixels of `sel` (mask AND core).
MetricReport selected_depth_metrics(const DenseMap& pred, const DenseMap& gt,
                                    const ValidityMask& mask, const PixelSelection& sel);

// RMSE over all valid pixels and all channels.
double full_rmse(const DenseMap& pred, const DenseMap& gt, const ValidityMask& mask);

}  // namespace retrofit

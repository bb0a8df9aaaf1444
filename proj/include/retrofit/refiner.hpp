#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "retrofit/kernel_map.hpp"
#include "retrofit/params.hpp"
#include "retrofit/sparse_ops.hpp"
#include "retrofit/sparse_tensor.hpp"

namespace retrofit {

enum class NormKind : std::uint8_t { kNone, kSiteNorm };

/// Shape of the sparse U-shaped refiner.
///
/// Input features are [rgb | coarse(geo_channels) | entropy]; the output has
/// geo_channels residual channels followed by conf_logits confidence logits.
struct RefinerConfig {
  int geo_channels = 1;
  std::vector<int> channels = {16, 32};
  int kernel_size = 3;
  int conf_logits = 4;
  NormKind norm = NormKind::kSiteNorm;

  int levels() const { return static_cast<int>(channels.size()); }
  int in_channels() const { return geo_channels + 4; }
  int out_channels() const { return geo_channels + conf_logits; }
  void validate() const;
};

struct ConvLayer {
  ConvParams conv;
  std::vector<double> norm_scale;  // empty when the layer is not normalized
  std::vector<double> norm_shift;
};

/// All refiner weights.
///
/// Encoder level l maps stride 2^l to 2^(l+1); decoder level l runs a
/// transposed conv back onto the cached level-l coordinates (`up`), concats
/// the level-l skip features and mixes them (`mix`). `head` is 1x1.
struct RefinerParams {
  std::vector<ConvLayer> encoder;
  ConvLayer bottleneck;
  std::vector<ConvLayer> up;
  std::vector<ConvLayer> mix;
  ConvLayer head;

  // Fan-in scaled uniform weights, zero biases, unit norm scale, and a zero
  // head so the untrained refiner emits no correction.
  static RefinerParams initialize(const RefinerConfig& cfg, std::uint64_t seed);
  static RefinerParams zeros(const RefinerConfig& cfg);

  // Throws InvalidArgument unless every shape matches `cfg`.
  void check(const RefinerConfig& cfg) const;

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
};

struct RefinerStats {
  std::uint64_t madds = 0;
  std::uint64_t kernel_pairs = 0;
  std::vector<std::size_t> sites_per_level;
};

// Intermediate state of one layer application, kept for the backward pass.
struct LayerTrace {
  const KernelMap* km = nullptr;
  std::optional<SparseTensor> input;
  std::optional<SparseTensor> output;
  SiteNormCache norm;
};

struct RefinerTape {
  std::vector<CoordinateSetPtr> levels;
  std::vector<std::unique_ptr<KernelMap>> maps;
  std::vector<LayerTrace> encoder;
  LayerTrace bottleneck;
  std::vector<LayerTrace> up;
  std::vector<LayerTrace> mix;
  LayerTrace head;
};

/// Runs the refiner on stride-1 input features.
///
/// The output shares the input's coordinate set and carries
/// cfg.out_channels() channels. When `tape` is given every intermediate is
/// retained for refiner_backward.
SparseTensor run_refiner(const SparseTensor& input, const RefinerParams& params,
                         const RefinerConfig& cfg, RefinerStats* stats = nullptr,
                         RefinerTape* tape = nullptr);

struct RefinerGrads {
  RefinerParams params;
  SparseTensor input;
};

RefinerGrads refiner_backward(const RefinerTape& tape, const RefinerParams& params,
                              const RefinerConfig& cfg, const SparseTensor& upstream);

// Smallest per-channel variance seen by any site_norm layer on the tape.
double min_norm_variance(const RefinerTape& tape);

// Recomputes the forward pass, then differentiates.
RefinerGrads refiner_backward(const SparseTensor& input, const RefinerParams& params,
                              const RefinerConfig& cfg, const SparseTensor& upstream);

}  // namespace retrofit

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "retrofit/dense_map.hpp"
#include "retrofit/params.hpp"
#include "retrofit/selector.hpp"
#include "retrofit/sparse_tensor.hpp"

namespace retrofit {

/// Two-layer gate perceptron over [coarse(C); delta(C); h_coarse; h_delta].
///
/// layer1 weights are stored [input][hidden], layer2 weights [hidden].
struct FusionParams {
  int geo_channels = 1;
  int hidden = 16;
  std::vector<double> w1;
  std::vector<double> b1;
  std::vector<double> w2;
  std::vector<double> b2 = {0.0};

  int input_width() const { return 2 * geo_channels + 2; }

  static FusionParams initialize(int geo_channels, std::uint64_t seed, int hidden = 16);
  static FusionParams zeros(int geo_channels, int hidden = 16);
  void check(int geo_channels) const;

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
};

enum class FusionStrategy : std::uint8_t { kGated, kDirect, kEntropy, kCoarseKeep };

std::string_view to_string(FusionStrategy s);
FusionStrategy parse_fusion_strategy(std::string_view name);

struct GateOutput {
  std::vector<double> value;
  double weight = 0.0;
};

// value = coarse + (1 - w) * delta with w from the perceptron.
GateOutput gated_fuse(std::span<const double> coarse, std::span<const double> delta,
                      double h_coarse, double h_delta, const FusionParams& params);

std::vector<double> direct_replace(std::span<const double> coarse, std::span<const double> delta);

// w = h_delta / (h_coarse + h_delta + 1e-8).
GateOutput entropy_weight_fuse(std::span<const double> coarse, std::span<const double> delta,
                               double h_coarse, double h_delta);

GateOutput fuse(FusionStrategy strategy, std::span<const double> coarse,
                std::span<const double> delta, double h_coarse, double h_delta,
                const FusionParams& params);

struct GateGrads {
  std::vector<double> coarse;
  std::vector<double> delta;
  double h_coarse = 0.0;
  double h_delta = 0.0;
};

/// Reverse mode of gated_fuse given dL/dvalue.
///
/// Parameter gradients are added into `param_grads`, which must have the
/// shape of `params`.
GateGrads fusion_backward(std::span<const double> coarse, std::span<const double> delta,
                          double h_coarse, double h_delta, const FusionParams& params,
                          std::span<const double> upstream, FusionParams& param_grads);

struct FusedMap {
  DenseMap map;
  std::vector<Coord> core;       // fused pixels, in selection order
  std::vector<double> weights;   // gate value per fused pixel
  std::vector<double> h_delta;   // refinement entropy per fused pixel
};

/// Copies `coarse_hr` and overwrites every core pixel with the fused value.
///
/// `refined` carries C residual channels followed by confidence logits; the
/// entropy of those logits is the refinement uncertainty. Halo pixels are
/// never written.
FusedMap apply_fusion_to_map(const DenseMap& coarse_hr, const PixelSelection& sel,
                             const SparseTensor& refined, const DenseMap& h_map,
                             const FusionParams& params, FusionStrategy strategy);

}  // namespace retrofit

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "retrofit/kernel_map.hpp"
#include "retrofit/sparse_tensor.hpp"

namespace retrofit {

/// Weights laid out as [offset][in_channel][out_channel] plus a bias.
template <typename T>
struct BasicConvParams {
  int kernel_size = 1;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  static BasicConvParams zeros(int kernel_size, int in_channels, int out_channels) {
    BasicConvParams p;
    p.kernel_size = kernel_size;
    p.in_channels = in_channels;
    p.out_channels = out_channels;
    p.weights.assign(static_cast<std::size_t>(kernel_size * kernel_size) *
                         static_cast<std::size_t>(in_channels) *
                         static_cast<std::size_t>(out_channels),
                     T{0});
    p.bias.assign(static_cast<std::size_t>(out_channels), T{0});
    return p;
  }

  T& w(int offset, int ci, int co) {
    return weights[(static_cast<std::size_t>(offset) * in_channels + ci) * out_channels + co];
  }
  T w(int offset, int ci, int co) const {
    return weights[(static_cast<std::size_t>(offset) * in_channels + ci) * out_channels + co];
  }
};

using ConvParams = BasicConvParams<double>;

// Exact multiply-add tally.
struct OpCounter {
  std::uint64_t madds = 0;
};

// Multiply-adds a convolution over `km` performs: pairs * C_in * C_out.
std::uint64_t conv_madds(const KernelMap& km, int in_channels, int out_channels);

/// y_u = bias + sum over offsets o of W_o^T x_{nbr(u, o)}.
///
/// Outputs live on km.output_coords(). Each output row is accumulated by one
/// task in offset order, so the result does not depend on thread count.
template <typename T>
BasicSparseTensor<T> sparse_conv(const BasicSparseTensor<T>& x, const BasicConvParams<T>& p,
                                 const KernelMap& km, OpCounter* counter = nullptr);

extern template SparseTensor sparse_conv(const SparseTensor&, const ConvParams&,
                                         const KernelMap&, OpCounter*);
extern template SparseTensorF sparse_conv(const SparseTensorF&, const BasicConvParams<float>&,
                                          const KernelMap&, OpCounter*);

struct ConvGrads {
  ConvParams params;
  SparseTensor input;
};

ConvGrads sparse_conv_backward(const SparseTensor& x, const ConvParams& p, const KernelMap& km,
                               const SparseTensor& grad_out);

inline constexpr double kSiteNormEps = 1e-5;

struct SiteNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::vector<double> normalized;  // N x C, before the affine
};

// Per channel: (x - mean) / sqrt(var + 1e-5) over active sites, then
// scale * . + shift. Statistics come from this call only.
SparseTensor site_norm(const SparseTensor& x, std::span<const double> scale,
                       std::span<const double> shift, SiteNormCache* cache = nullptr);

struct SiteNormGrads {
  std::vector<double> scale;
  std::vector<double> shift;
  SparseTensor input;
};

SiteNormGrads site_norm_backward(const SiteNormCache& cache, std::span<const double> scale,
                                 const SparseTensor& grad_out);

SparseTensor relu(SparseTensor x);
// Gradient through max(0, .) given the forward output.
SparseTensor relu_backward(const SparseTensor& output, SparseTensor grad_out);

// Channel-wise concatenation of two tensors on the same coordinate set.
SparseTensor concat_channels(const SparseTensor& a, const SparseTensor& b);
std::pair<SparseTensor, SparseTensor> split_channels(const SparseTensor& x, int first);

}  // namespace retrofit

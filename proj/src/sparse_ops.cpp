#include "retrofit/sparse_ops.hpp"

#include <cmath>
#include <string>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

template <typename T>
void check_conv(const BasicSparseTensor<T>& x, const BasicConvParams<T>& p, const KernelMap& km) {
  if (x.size() != km.input_count()) {
    throw InvalidArgument("sparse_conv: input has " + std::to_string(x.size()) +
                          " sites, kernel map expects " + std::to_string(km.input_count()));
  }
  if (x.channels() != p.in_channels) {
    throw InvalidArgument("sparse_conv: input channels " + std::to_string(x.channels()) +
                          " != weight in_channels " + std::to_string(p.in_channels));
  }
  if (p.kernel_size != km.kernel_size()) {
    throw InvalidArgument("sparse_conv: weight kernel size differs from kernel map");
  }
  const std::size_t expected = static_cast<std::size_t>(km.volume()) *
                               static_cast<std::size_t>(p.in_channels) *
                               static_cast<std::size_t>(p.out_channels);
  if (p.weights.size() != expected || p.bias.size() != static_cast<std::size_t>(p.out_channels)) {
    throw InvalidArgument("sparse_conv: weight/bias shape mismatch");
  }
}

void check_same_sites(const SparseTensor& a, const SparseTensor& b, const char* what) {
  if (a.size() != b.size() || a.channels() != b.channels()) {
    throw InvalidArgument(std::string(what) + ": tensor shape mismatch");
  }
}

}  // namespace

std::uint64_t conv_madds(const KernelMap& km, int in_channels, int out_channels) {
  return static_cast<std::uint64_t>(km.pair_count()) * static_cast<std::uint64_t>(in_channels) *
         static_cast<std::uint64_t>(out_channels);
}

template <typename T>
BasicSparseTensor<T> sparse_conv(const BasicSparseTensor<T>& x, const BasicConvParams<T>& p,
                                 const KernelMap& km, OpCounter* counter) {
  check_conv(x, p, km);
  const int cin = p.in_channels;
  const int cout = p.out_channels;
  const int vol = km.volume();
  const auto n_out = static_cast<std::ptrdiff_t>(km.output_count());
  std::vector<T> out(km.output_count() * static_cast<std::size_t>(cout));
  const auto in = x.feats();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t u = 0; u < n_out; ++u) {
    T* acc = &out[static_cast<std::size_t>(u) * static_cast<std::size_t>(cout)];
    for (int co = 0; co < cout; ++co) acc[co] = p.bias[static_cast<std::size_t>(co)];
    const auto nbr = km.neighbors(static_cast<std::size_t>(u));
    for (int o = 0; o < vol; ++o) {
      const int i = nbr[static_cast<std::size_t>(o)];
      if (i < 0) continue;
      const T* xi = &in[static_cast<std::size_t>(i) * static_cast<std::size_t>(cin)];
      const T* wo = &p.weights[static_cast<std::size_t>(o) * cin * cout];
      for (int ci = 0; ci < cin; ++ci) {
        const T xv = xi[ci];
        const T* wrow = wo + static_cast<std::size_t>(ci) * cout;
        for (int co = 0; co < cout; ++co) acc[co] += xv * wrow[co];
      }
    }
  }
  if (counter) counter->madds += conv_madds(km, cin, cout);
  return BasicSparseTensor<T>(km.output_coords(), cout, std::move(out));
}

template SparseTensor sparse_conv(const SparseTensor&, const ConvParams&, const KernelMap&,
                                  OpCounter*);
template SparseTensorF sparse_conv(const SparseTensorF&, const BasicConvParams<float>&,
                                   const KernelMap&, OpCounter*);

ConvGrads sparse_conv_backward(const SparseTensor& x, const ConvParams& p, const KernelMap& km,
                               const SparseTensor& grad_out) {
  check_conv(x, p, km);
  if (grad_out.size() != km.output_count() || grad_out.channels() != p.out_channels) {
    throw InvalidArgument("sparse_conv_backward: upstream gradient shape mismatch");
  }
  const int cin = p.in_channels;
  const int cout = p.out_channels;
  const int vol = km.volume();
  ConvGrads g{ConvParams::zeros(p.kernel_size, cin, cout), SparseTensor(x.coordinates_ptr(), cin)};
  auto gx = g.input.mutable_feats();
  const auto in = x.feats();
  const auto go = grad_out.feats();
  for (std::size_t u = 0; u < km.output_count(); ++u) {
    const double* gu = &go[u * static_cast<std::size_t>(cout)];
    for (int co = 0; co < cout; ++co) g.params.bias[static_cast<std::size_t>(co)] += gu[co];
    const auto nbr = km.neighbors(u);
    for (int o = 0; o < vol; ++o) {
      const int i = nbr[static_cast<std::size_t>(o)];
      if (i < 0) continue;
      const double* xi = &in[static_cast<std::size_t>(i) * static_cast<std::size_t>(cin)];
      double* gxi = &gx[static_cast<std::size_t>(i) * static_cast<std::size_t>(cin)];
      const double* wo = &p.weights[static_cast<std::size_t>(o) * cin * cout];
      double* gwo = &g.params.weights[static_cast<std::size_t>(o) * cin * cout];
      for (int ci = 0; ci < cin; ++ci) {
        const double xv = xi[ci];
        const double* wrow = wo + static_cast<std::size_t>(ci) * cout;
        double* gwrow = gwo + static_cast<std::size_t>(ci) * cout;
        double dot = 0.0;
        for (int co = 0; co < cout; ++co) {
          gwrow[co] += xv * gu[co];
          dot += wrow[co] * gu[co];
        }
        gxi[ci] += dot;
      }
    }
  }
  return g;
}

SparseTensor site_norm(const SparseTensor& x, std::span<const double> scale,
                       std::span<const double> shift, SiteNormCache* cache) {
  const int c = x.channels();
  const std::size_t n = x.size();
  if (scale.size() != static_cast<std::size_t>(c) || shift.size() != static_cast<std::size_t>(c)) {
    throw InvalidArgument("site_norm: affine size mismatch");
  }
  if (n == 0) throw InvalidArgument("site_norm: no active sites");
  const auto in = x.feats();
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  std::vector<double> inv_std(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) mean[static_cast<std::size_t>(ch)] += in[i * c + ch];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> var(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double d = in[i * c + ch] - mean[static_cast<std::size_t>(ch)];
      var[static_cast<std::size_t>(ch)] += d * d;
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    inv_std[static_cast<std::size_t>(ch)] =
        1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] / static_cast<double>(n) + kSiteNormEps);
  }
  std::vector<double> normalized(in.size());
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const double xhat = (in[i * c + ch] - mean[k]) * inv_std[k];
      normalized[i * c + ch] = xhat;
      out[i * c + ch] = scale[k] * xhat + shift[k];
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
  }
  return SparseTensor(x.coordinates_ptr(), c, std::move(out));
}

SiteNormGrads site_norm_backward(const SiteNormCache& cache, std::span<const double> scale,
                                 const SparseTensor& grad_out) {
  const int c = grad_out.channels();
  const std::size_t n = grad_out.size();
  if (cache.normalized.size() != n * static_cast<std::size_t>(c) ||
      scale.size() != static_cast<std::size_t>(c)) {
    throw InvalidArgument("site_norm_backward: shape mismatch");
  }
  SiteNormGrads g{std::vector<double>(static_cast<std::size_t>(c), 0.0),
                  std::vector<double>(static_cast<std::size_t>(c), 0.0),
                  SparseTensor(grad_out.coordinates_ptr(), c)};
  const auto go = grad_out.feats();
  const auto& xhat = cache.normalized;
  // Sums of dxhat and dxhat * xhat per channel.
  std::vector<double> sum_d(static_cast<std::size_t>(c), 0.0);
  std::vector<double> sum_dx(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const double gv = go[i * c + ch];
      g.shift[k] += gv;
      g.scale[k] += gv * xhat[i * c + ch];
      const double d = gv * scale[k];
      sum_d[k] += d;
      sum_dx[k] += d * xhat[i * c + ch];
    }
  }
  auto gx = g.input.mutable_feats();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const double d = go[i * c + ch] * scale[k];
      gx[i * c + ch] =
          cache.inv_std[k] * (d - inv_n * sum_d[k] - xhat[i * c + ch] * inv_n * sum_dx[k]);
    }
  }
  return g;
}

SparseTensor relu(SparseTensor x) {
  for (double& v : x.mutable_feats()) v = v > 0.0 ? v : 0.0;
  return x;
}

SparseTensor relu_backward(const SparseTensor& output, SparseTensor grad_out) {
  check_same_sites(output, grad_out, "relu_backward");
  const auto y = output.feats();
  auto g = grad_out.mutable_feats();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(y[i] > 0.0)) g[i] = 0.0;
  }
  return grad_out;
}

SparseTensor concat_channels(const SparseTensor& a, const SparseTensor& b) {
  if (a.size() != b.size()) throw InvalidArgument("concat_channels: site count mismatch");
  const int ca = a.channels();
  const int cb = b.channels();
  std::vector<double> out(a.size() * static_cast<std::size_t>(ca + cb));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto ra = a.row(i);
    const auto rb = b.row(i);
    double* dst = &out[i * static_cast<std::size_t>(ca + cb)];
    std::copy(ra.begin(), ra.end(), dst);
    std::copy(rb.begin(), rb.end(), dst + ca);
  }
  return SparseTensor(a.coordinates_ptr(), ca + cb, std::move(out));
}

std::pair<SparseTensor, SparseTensor> split_channels(const SparseTensor& x, int first) {
  const int c = x.channels();
  if (first < 1 || first >= c) throw InvalidArgument("split_channels: bad split point");
  std::vector<double> a(x.size() * static_cast<std::size_t>(first));
  std::vector<double> b(x.size() * static_cast<std::size_t>(c - first));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto r = x.row(i);
    std::copy(r.begin(), r.begin() + first, &a[i * static_cast<std::size_t>(first)]);
    std::copy(r.begin() + first, r.end(), &b[i * static_cast<std::size_t>(c - first)]);
  }
  return {SparseTensor(x.coordinates_ptr(), first, std::move(a)),
          SparseTensor(x.coordinates_ptr(), c - first, std::move(b))};
}

}  // namespace retrofit

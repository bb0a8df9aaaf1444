#include "retrofit/resample.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

struct Tap {
  int src;
  double weight;
};

// Per-output-index list of source taps along one axis.
std::vector<std::vector<Tap>> area_taps(int src_len, int dst_len) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(dst_len));
  const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
  for (int i = 0; i < dst_len; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(src_len - 1, static_cast<int>(std::ceil(hi)) - 1);
    for (int s = first; s <= last; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0.0) taps[static_cast<std::size_t>(i)].push_back({s, overlap / scale});
    }
  }
  return taps;
}

// Taps sum to one only up to rounding, so a run of equal samples is passed
// through unchanged to keep constant regions exact.
double weighted_mean(const std::vector<Tap>& taps, const double* base, std::size_t stride) {
  const double first = base[static_cast<std::size_t>(taps.front().src) * stride];
  bool uniform = true;
  double sum = 0.0;
  double weight = 0.0;
  for (const Tap& t : taps) {
    const double v = base[static_cast<std::size_t>(t.src) * stride];
    uniform = uniform && v == first;
    sum += t.weight * v;
    weight += t.weight;
  }
  return uniform ? first : sum / weight;
}

}  // namespace

ResampleShape area_output_shape(int height, int width, int long_side) {
  const int long_in = std::max(height, width);
  if (long_side < 1 || long_side > long_in) {
    throw InvalidArgument("long_side must be in [1, " + std::to_string(long_in) + "], got " +
                          std::to_string(long_side));
  }
  const int short_in = std::min(height, width);
  const int short_out = std::max(
      1, static_cast<int>(std::lround(static_cast<double>(short_in) * long_side / long_in)));
  if (height >= width) return {long_side, short_out};
  return {short_out, long_side};
}

DenseMap downsample_area(const DenseMap& img, int long_side) {
  const auto [out_h, out_w] = area_output_shape(img.height(), img.width(), long_side);
  const std::size_t channels = static_cast<std::size_t>(img.channels());
  const auto row_taps = area_taps(img.height(), out_h);
  const auto col_taps = area_taps(img.width(), out_w);

  // Horizontal pass into an (H x out_w x C) buffer, then vertical.
  const auto src = img.values();
  std::vector<double> horiz(static_cast<std::size_t>(img.height()) * out_w * channels);
  for (int r = 0; r < img.height(); ++r) {
    const double* row = &src[static_cast<std::size_t>(r) * img.width() * channels];
    for (int j = 0; j < out_w; ++j) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        horiz[(static_cast<std::size_t>(r) * out_w + j) * channels + ch] =
            weighted_mean(col_taps[static_cast<std::size_t>(j)], row + ch, channels);
      }
    }
  }

  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * channels);
  const std::size_t column_stride = static_cast<std::size_t>(out_w) * channels;
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        out[(static_cast<std::size_t>(i) * out_w + j) * channels + ch] =
            weighted_mean(row_taps[static_cast<std::size_t>(i)],
                          &horiz[static_cast<std::size_t>(j) * channels + ch], column_stride);
      }
    }
  }
  return DenseMap(out_h, out_w, img.channels(), img.kind(), std::move(out), img.precision());
}

DenseMap upsample_nearest(const DenseMap& map, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw InvalidArgument("upsample_nearest: output dimensions must be positive");
  }
  if (out_h < map.height() || out_w < map.width()) {
    throw InvalidArgument("upsample_nearest: output must not be smaller than input");
  }
  const int channels = map.channels();
  const auto src = map.values();
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * channels);
  std::vector<int> src_col(static_cast<std::size_t>(out_w));
  for (int c = 0; c < out_w; ++c) {
    src_col[static_cast<std::size_t>(c)] =
        static_cast<int>(static_cast<long long>(c) * map.width() / out_w);
  }
  for (int r = 0; r < out_h; ++r) {
    const auto sr = static_cast<std::size_t>(static_cast<long long>(r) * map.height() / out_h);
    for (int c = 0; c < out_w; ++c) {
      const double* s =
          &src[(sr * map.width() + static_cast<std::size_t>(src_col[static_cast<std::size_t>(c)])) *
               channels];
      double* d = &out[(static_cast<std::size_t>(r) * out_w + c) * channels];
      std::copy(s, s + channels, d);
    }
  }
  return DenseMap(out_h, out_w, channels, map.kind(), std::move(out), map.precision());
}

}  // namespace retrofit

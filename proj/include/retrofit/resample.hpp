#pragma once

#include "retrofit/dense_map.hpp"

namespace retrofit {

// Output dimensions used by downsample_area for a given long side.
struct ResampleShape {
  int height;
  int width;
};
ResampleShape area_output_shape(int height, int width, int long_side);

/// Area-average resampling to `long_side` pixels on the longer axis.
///
/// Each output pixel is the overlap-weighted mean of the source pixels its
/// footprint covers. Aspect ratio is preserved with the short side rounded.
DenseMap downsample_area(const DenseMap& img, int long_side);

/// Nearest-neighbour enlargement: out(r, c) = in(r*H/out_h, c*W/out_w).
DenseMap upsample_nearest(const DenseMap& map, int out_h, int out_w);

}  // namespace retrofit

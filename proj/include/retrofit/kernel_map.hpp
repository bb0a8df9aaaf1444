#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "retrofit/sparse_tensor.hpp"

namespace retrofit {

struct KernelOffset {
  int dy;
  int dx;
};

/// Gather-scatter plan for one sparse convolution.
///
/// Stored output-major: for every output row a fixed block of k*k input rows,
/// one per kernel offset in scan order (dy outer, dx inner), -1 where the
/// neighbour is inactive. A forward map pairs output u with input
/// u + o * s_in; a transposed map pairs fine output u with coarse input
/// u - o * s_out, i.e. exactly the pairs of the matching strided map.
class KernelMap {
 public:
  KernelMap(CoordinateSetPtr input, CoordinateSetPtr output, int kernel_size, bool transposed,
            std::vector<int> neighbors);

  int kernel_size() const { return kernel_size_; }
  int volume() const { return kernel_size_ * kernel_size_; }
  bool transposed() const { return transposed_; }
  KernelOffset offset(int index) const;

  const CoordinateSetPtr& input_coords() const { return input_; }
  const CoordinateSetPtr& output_coords() const { return output_; }
  std::size_t input_count() const { return input_->size(); }
  std::size_t output_count() const { return output_->size(); }

  std::span<const int> neighbors(std::size_t out_row) const {
    return {neighbors_.data() + out_row * static_cast<std::size_t>(volume()),
            static_cast<std::size_t>(volume())};
  }

  // (input_row, output_row) pairs under one offset, ordered by output row.
  std::vector<std::pair<int, int>> pairs(int offset_index) const;
  std::size_t pair_count(int offset_index) const;
  std::size_t pair_count() const { return total_pairs_; }

 private:
  CoordinateSetPtr input_;
  CoordinateSetPtr output_;
  int kernel_size_;
  bool transposed_;
  std::vector<int> neighbors_;
  std::size_t total_pairs_ = 0;
};

/// Forward kernel map from `input` to `output` coordinates.
///
/// `output` must live at stride input.stride * conv_stride. Throws
/// InvalidArgument for even kernel sizes.
KernelMap build_kernel_map(const CoordinateSetPtr& input, const CoordinateSetPtr& output,
                           int kernel_size, int conv_stride);

template <typename T>
KernelMap build_kernel_map(const BasicSparseTensor<T>& input, const CoordinateSetPtr& output,
                           int kernel_size, int conv_stride) {
  return build_kernel_map(input.coordinates_ptr(), output, kernel_size, conv_stride);
}

// Transposed map from a coarse set back onto a finer cached set.
KernelMap build_transposed_kernel_map(const CoordinateSetPtr& coarse_input,
                                      const CoordinateSetPtr& fine_output, int kernel_size);

// Floor-snaps every coordinate to the grid of spacing stride * factor,
// deduplicated and sorted.
CoordinateSetPtr downsample_coords(const CoordinateSet& x, int factor = 2);

}  // namespace retrofit

#include "retrofit/kernel_map.hpp"

#include <algorithm>
#include <string>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

void check_kernel_size(int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw InvalidArgument("kernel size must be odd and positive, got " +
                          std::to_string(kernel_size));
  }
}

int floor_snap(int v, int cell) {
  const int m = v % cell;
  return m < 0 ? v - m - cell : v - m;
}

}  // namespace

KernelMap::KernelMap(CoordinateSetPtr input, CoordinateSetPtr output, int kernel_size,
                     bool transposed, std::vector<int> neighbors)
    : input_(std::move(input)),
      output_(std::move(output)),
      kernel_size_(kernel_size),
      transposed_(transposed),
      neighbors_(std::move(neighbors)) {
  if (neighbors_.size() != output_->size() * static_cast<std::size_t>(volume())) {
    throw InvalidArgument("kernel map table size mismatch");
  }
  total_pairs_ = static_cast<std::size_t>(
      std::count_if(neighbors_.begin(), neighbors_.end(), [](int v) { return v >= 0; }));
}

KernelOffset KernelMap::offset(int index) const {
  const int r = kernel_size_ / 2;
  return {index / kernel_size_ - r, index % kernel_size_ - r};
}

std::vector<std::pair<int, int>> KernelMap::pairs(int offset_index) const {
  std::vector<std::pair<int, int>> out;
  const std::size_t v = static_cast<std::size_t>(volume());
  for (std::size_t u = 0; u < output_count(); ++u) {
    const int i = neighbors_[u * v + static_cast<std::size_t>(offset_index)];
    if (i >= 0) out.emplace_back(i, static_cast<int>(u));
  }
  return out;
}

std::size_t KernelMap::pair_count(int offset_index) const {
  std::size_t n = 0;
  const std::size_t v = static_cast<std::size_t>(volume());
  for (std::size_t u = 0; u < output_count(); ++u) {
    if (neighbors_[u * v + static_cast<std::size_t>(offset_index)] >= 0) ++n;
  }
  return n;
}

KernelMap build_kernel_map(const CoordinateSetPtr& input, const CoordinateSetPtr& output,
                           int kernel_size, int conv_stride) {
  check_kernel_size(kernel_size);
  if (conv_stride < 1) throw InvalidArgument("conv stride must be positive");
  const int s_in = input->stride();
  if (output->stride() != s_in * conv_stride) {
    throw InvalidArgument("output stride " + std::to_string(output->stride()) +
                          " != input stride " + std::to_string(s_in) + " * conv stride " +
                          std::to_string(conv_stride));
  }
  const int radius = kernel_size / 2;
  const int vol = kernel_size * kernel_size;
  const auto n_out = static_cast<std::ptrdiff_t>(output->size());
  std::vector<int> table(output->size() * static_cast<std::size_t>(vol));
  const CoordinateSet& in = *input;
  const CoordinateSet& out = *output;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t u = 0; u < n_out; ++u) {
    const Coord base = out[static_cast<std::size_t>(u)];
    int* row = &table[static_cast<std::size_t>(u) * static_cast<std::size_t>(vol)];
    int k = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        row[k++] = in.find({base.row + dy * s_in, base.col + dx * s_in});
      }
    }
  }
  return KernelMap(input, output, kernel_size, false, std::move(table));
}

KernelMap build_transposed_kernel_map(const CoordinateSetPtr& coarse_input,
                                      const CoordinateSetPtr& fine_output, int kernel_size) {
  check_kernel_size(kernel_size);
  const int s_out = fine_output->stride();
  if (coarse_input->stride() % s_out != 0 || coarse_input->stride() == s_out) {
    throw InvalidArgument("transposed map needs a coarser input stride");
  }
  const int radius = kernel_size / 2;
  const int vol = kernel_size * kernel_size;
  const auto n_out = static_cast<std::ptrdiff_t>(fine_output->size());
  std::vector<int> table(fine_output->size() * static_cast<std::size_t>(vol));
  const CoordinateSet& in = *coarse_input;
  const CoordinateSet& out = *fine_output;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t u = 0; u < n_out; ++u) {
    const Coord base = out[static_cast<std::size_t>(u)];
    int* row = &table[static_cast<std::size_t>(u) * static_cast<std::size_t>(vol)];
    int k = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        row[k++] = in.find({base.row - dy * s_out, base.col - dx * s_out});
      }
    }
  }
  return KernelMap(coarse_input, fine_output, kernel_size, true, std::move(table));
}

CoordinateSetPtr downsample_coords(const CoordinateSet& x, int factor) {
  if (factor < 1) throw InvalidArgument("downsample factor must be positive");
  const int cell = x.stride() * factor;
  std::vector<Coord> snapped;
  snapped.reserve(x.size());
  for (const Coord& c : x.coords()) {
    snapped.push_back({floor_snap(c.row, cell), floor_snap(c.col, cell)});
  }
  std::sort(snapped.begin(), snapped.end());
  snapped.erase(std::unique(snapped.begin(), snapped.end()), snapped.end());
  return make_coordinate_set(std::move(snapped), cell);
}

}  // namespace retrofit

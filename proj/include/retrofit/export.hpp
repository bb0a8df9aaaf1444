#pragma once

#include <filesystem>
#include <utility>

#include "retrofit/dense_map.hpp"

namespace retrofit {

/// 16-bit grayscale PNG of a depth map, min-max normalized over valid pixels.
///
/// Invalid pixels are written as 0. Returns the (min, max) depth range, which
/// is also written to `<path>.range.txt`. A constant map maps to one level.
std::pair<double, double> write_depth_png(const std::filesystem::path& path,
                                          const DenseMap& depth, const ValidityMask& mask);

// Reads back the 16-bit levels, row-major; for tests and inspection.
std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int* height,
                                      int* width);

// ASCII PLY, one vertex per valid pixel in raster order. Returns the count.
std::size_t write_pointmap_ply(const std::filesystem::path& path, const DenseMap& pointmap,
                               const ValidityMask& mask);

/// Depth: PNG + range sidecar + TensorFile. Pointmap: PLY + TensorFile.
/// Files are named `<stem>.png`, `<stem>.ply`, `<stem>.rtft`.
void export_outputs(const std::filesystem::path& dir, const std::string& stem,
                    const DenseMap& map, const ValidityMask& mask);

}  // namespace retrofit

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "retrofit/dense_map.hpp"
#include "retrofit/selector.hpp"

namespace retrofit {

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kI32 = 3, kU8 = 4 };

std::size_t dtype_size(DType t);
std::string_view to_string(DType t);
DType parse_dtype(std::string_view name);

/// In-memory image of one TensorFile: dtype, dims and the little-endian
/// payload bytes exactly as stored.
struct Tensor {
  DType dtype = DType::kF64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t count() const;

  static Tensor from_f64(std::vector<std::uint32_t> dims, std::span<const double> values);
  static Tensor from_f32(std::vector<std::uint32_t> dims, std::span<const double> values);
  static Tensor from_i32(std::vector<std::uint32_t> dims, std::span<const std::int32_t> values);
  static Tensor from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values);

  // Any dtype widened to double.
  std::vector<double> to_f64() const;
  // Integer dtypes only.
  std::vector<std::int32_t> to_i32() const;
};

inline constexpr std::uint16_t kTensorFileVersion = 1;

// Header "RTFT", u16 version, u8 dtype, u8 ndim, ndim x u32 dims, payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
std::size_t encoded_size(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// H x W x C, f32 for single-precision maps and f64 otherwise.
Tensor tensor_from_map(const DenseMap& map);
DenseMap map_from_tensor(const Tensor& t, MapKind kind);

void save_map(const std::filesystem::path& path, const DenseMap& map);
DenseMap load_map(const std::filesystem::path& path, MapKind kind);

// N x 3 i32 rows (row, col, is_core).
Tensor tensor_from_selection(const PixelSelection& sel);
PixelSelection selection_from_tensor(const Tensor& t, int height, int width);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Text header "retrofit-weights 1", "count N", one "name dtype shape offset"
/// line per tensor (shape as AxBxC, offset into the binary section), "end",
/// then the TensorFiles back to back.
void write_manifest(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_manifest(std::istream& in);

}  // namespace retrofit

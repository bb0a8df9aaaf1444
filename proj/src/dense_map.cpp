#include "retrofit/dense_map.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "retrofit/error.hpp"

namespace retrofit {

namespace {

double store_as(Precision precision, double value) {
  return precision == Precision::kSingle ? static_cast<double>(static_cast<float>(value))
                                         : value;
}

}  // namespace

std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::kRgb: return "rgb";
    case MapKind::kDepth: return "depth";
    case MapKind::kPointmap: return "pointmap";
    case MapKind::kLogits: return "logits";
    case MapKind::kEntropy: return "entropy";
  }
  return "unknown";
}

DenseMap::DenseMap(int height, int width, int channels, MapKind kind, Precision precision)
    : height_(height), width_(width), channels_(channels), kind_(kind), precision_(precision) {
  if (height < 1 || width < 1 || channels < 1) {
    throw InvalidArgument("DenseMap dimensions must be positive");
  }
  values_.assign(pixel_count() * static_cast<std::size_t>(channels), 0.0);
  validate();
}

DenseMap::DenseMap(int height, int width, int channels, MapKind kind,
                   std::vector<double> values, Precision precision)
    : height_(height),
      width_(width),
      channels_(channels),
      kind_(kind),
      precision_(precision),
      values_(std::move(values)) {
  if (height < 1 || width < 1 || channels < 1) {
    throw InvalidArgument("DenseMap dimensions must be positive");
  }
  if (values_.size() != pixel_count() * static_cast<std::size_t>(channels)) {
    throw InvalidArgument("DenseMap value count " + std::to_string(values_.size()) +
                          " does not match " + std::to_string(height) + "x" +
                          std::to_string(width) + "x" + std::to_string(channels));
  }
  if (precision_ == Precision::kSingle) {
    for (double& v : values_) v = store_as(precision_, v);
  }
  validate();
}

void DenseMap::validate() const {
  switch (kind_) {
    case MapKind::kDepth:
      if (channels_ != 1) throw InvalidArgument("depth map must have 1 channel");
      break;
    case MapKind::kEntropy:
      if (channels_ != 1) throw InvalidArgument("entropy map must have 1 channel");
      for (double v : values_) {
        if (!(v >= 0.0 && v <= 1.0)) {
          throw InvalidArgument("entropy map values must lie in [0, 1]");
        }
      }
      break;
    case MapKind::kPointmap:
      if (channels_ != 3) throw InvalidArgument("pointmap must have 3 channels");
      break;
    case MapKind::kRgb:
      if (channels_ != 3) throw InvalidArgument("rgb map must have 3 channels");
      break;
    case MapKind::kLogits:
      break;
  }
}

void DenseMap::set(int row, int col, int ch, double value) {
  if (kind_ == MapKind::kEntropy && !(value >= 0.0 && value <= 1.0)) {
    throw InvalidArgument("entropy value out of [0, 1] at " + pixel_name(row, col));
  }
  values_[offset(row, col, ch)] = store_as(precision_, value);
}

DenseMap DenseMap::relabeled(MapKind kind) const {
  return DenseMap(height_, width_, channels_, kind, values_, precision_);
}

bool bitwise_equal(const DenseMap& a, const DenseMap& b) {
  if (!a.same_shape(b) || a.kind() != b.kind() || a.precision() != b.precision()) {
    return false;
  }
  const auto va = a.values();
  const auto vb = b.values();
  return std::memcmp(va.data(), vb.data(), va.size_bytes()) == 0;
}

ValidityMask::ValidityMask(int height, int width, bool value)
    : height_(height), width_(width) {
  if (height < 1 || width < 1) throw InvalidArgument("mask dimensions must be positive");
  bits_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width),
               value ? 1 : 0);
}

ValidityMask::ValidityMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (height < 1 || width < 1) throw InvalidArgument("mask dimensions must be positive");
  if (bits_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw InvalidArgument("mask bit count does not match dimensions");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t ValidityMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

}  // namespace retrofit

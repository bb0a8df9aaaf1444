#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace retrofit {

enum class MapKind : std::uint8_t { kRgb, kDepth, kPointmap, kLogits, kEntropy };

// Storage precision. Values are always held as doubles; a single-precision
// map rounds every stored value through float.
enum class Precision : std::uint8_t { kSingle, kDouble };

std::string_view to_string(MapKind kind);

/// Row-major H x W x C raster.
///
/// Channel count is tied to the kind: depth and entropy maps carry one
/// channel, pointmaps three, rgb three. Entropy values live in [0, 1].
class DenseMap {
 public:
  DenseMap(int height, int width, int channels, MapKind kind,
           Precision precision = Precision::kDouble);
  DenseMap(int height, int width, int channels, MapKind kind,
           std::vector<double> values, Precision precision = Precision::kDouble);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  MapKind kind() const { return kind_; }
  Precision precision() const { return precision_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }

  double at(int row, int col, int ch = 0) const {
    return values_[offset(row, col, ch)];
  }
  void set(int row, int col, int ch, double value);

  std::span<const double> pixel(int row, int col) const {
    return {values_.data() + offset(row, col, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const double> values() const { return values_; }

  // Same geometry and kind, different kind label (e.g. logits -> score).
  DenseMap relabeled(MapKind kind) const;

  bool same_shape(const DenseMap& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

 private:
  std::size_t offset(int row, int col, int ch) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(col)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(ch);
  }
  void validate() const;

  int height_;
  int width_;
  int channels_;
  MapKind kind_;
  Precision precision_;
  std::vector<double> values_;
};

// Dimensions, kind, precision and every value bit pattern match.
bool bitwise_equal(const DenseMap& a, const DenseMap& b);

class ValidityMask {
 public:
  ValidityMask(int height, int width, bool value = true);
  ValidityMask(int height, int width, std::vector<std::uint8_t> bits);

  static ValidityMask all_valid(int height, int width) { return {height, width, true}; }

  int height() const { return height_; }
  int width() const { return width_; }
  bool valid(int row, int col) const {
    return bits_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
                 static_cast<std::size_t>(col)] != 0;
  }
  void set(int row, int col, bool value) {
    bits_[static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
          static_cast<std::size_t>(col)] = value ? 1 : 0;
  }
  std::size_t count() const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool matches(const DenseMap& map) const {
    return height_ == map.height() && width_ == map.width();
  }

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> bits_;
};

}  // namespace retrofit

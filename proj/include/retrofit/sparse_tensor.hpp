#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace retrofit {

struct Coord {
  int row = 0;
  int col = 0;
  auto operator<=>(const Coord&) const = default;
};

/// Open-addressing hash map from coordinate to row index.
///
/// Linear probing over a power-of-two table; a coordinate may be inserted
/// once. Lookups of absent coordinates return -1.
class CoordIndex {
 public:
  CoordIndex() = default;
  explicit CoordIndex(std::size_t expected);

  // False if the coordinate is already present.
  bool insert(Coord c, int row);
  int find(Coord c) const;
  std::size_t size() const { return size_; }

 private:
  static std::uint64_t pack(Coord c) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.row)) << 32) |
           static_cast<std::uint32_t>(c.col);
  }
  static std::uint64_t mix(std::uint64_t x);
  void grow();

  std::vector<std::uint64_t> keys_;
  std::vector<int> rows_;  // -1 marks an empty slot
  std::size_t mask_ = 0;
  std::size_t size_ = 0;
};

/// Unique active coordinates at one stride level plus their hash index.
///
/// Shared between tensors by pointer: decoder levels reuse the encoder's
/// set, so equality of coordinate sets is pointer identity where it matters.
class CoordinateSet {
 public:
  CoordinateSet(std::vector<Coord> coords, int stride);

  std::span<const Coord> coords() const { return coords_; }
  const Coord& operator[](std::size_t i) const { return coords_[i]; }
  std::size_t size() const { return coords_.size(); }
  int stride() const { return stride_; }
  int find(Coord c) const { return index_.find(c); }
  const CoordIndex& index() const { return index_; }

 private:
  std::vector<Coord> coords_;
  int stride_;
  CoordIndex index_;
};

using CoordinateSetPtr = std::shared_ptr<const CoordinateSet>;

CoordinateSetPtr make_coordinate_set(std::vector<Coord> coords, int stride);

/// Active sites with an N x C feature matrix (row-major).
template <typename T>
class BasicSparseTensor {
 public:
  BasicSparseTensor(CoordinateSetPtr coords, int channels);
  BasicSparseTensor(CoordinateSetPtr coords, int channels, std::vector<T> feats);

  const CoordinateSet& coordinates() const { return *coords_; }
  const CoordinateSetPtr& coordinates_ptr() const { return coords_; }
  std::size_t size() const { return coords_->size(); }
  int channels() const { return channels_; }
  int stride() const { return coords_->stride(); }

  std::span<const T> feats() const { return feats_; }
  std::span<T> mutable_feats() { return feats_; }
  std::span<const T> row(std::size_t i) const {
    return {feats_.data() + i * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }
  std::span<T> mutable_row(std::size_t i) {
    return {feats_.data() + i * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }

 private:
  CoordinateSetPtr coords_;
  int channels_;
  std::vector<T> feats_;
};

using SparseTensor = BasicSparseTensor<double>;
using SparseTensorF = BasicSparseTensor<float>;

extern template class BasicSparseTensor<float>;
extern template class BasicSparseTensor<double>;

}  // namespace retrofit

#include "retrofit/sparse_tensor.hpp"

#include <string>

#include "retrofit/error.hpp"

namespace retrofit {

CoordIndex::CoordIndex(std::size_t expected) {
  std::size_t cap = 16;
  while (cap < expected * 2) cap <<= 1;
  keys_.assign(cap, 0);
  rows_.assign(cap, -1);
  mask_ = cap - 1;
}

std::uint64_t CoordIndex::mix(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

void CoordIndex::grow() {
  std::vector<std::uint64_t> old_keys = std::move(keys_);
  std::vector<int> old_rows = std::move(rows_);
  const std::size_t cap = old_keys.empty() ? 16 : old_keys.size() * 2;
  keys_.assign(cap, 0);
  rows_.assign(cap, -1);
  mask_ = cap - 1;
  for (std::size_t i = 0; i < old_keys.size(); ++i) {
    if (old_rows[i] < 0) continue;
    std::size_t slot = mix(old_keys[i]) & mask_;
    while (rows_[slot] >= 0) slot = (slot + 1) & mask_;
    keys_[slot] = old_keys[i];
    rows_[slot] = old_rows[i];
  }
}

bool CoordIndex::insert(Coord c, int row) {
  if (keys_.empty() || (size_ + 1) * 2 > keys_.size()) grow();
  const std::uint64_t key = pack(c);
  std::size_t slot = mix(key) & mask_;
  while (rows_[slot] >= 0) {
    if (keys_[slot] == key) return false;
    slot = (slot + 1) & mask_;
  }
  keys_[slot] = key;
  rows_[slot] = row;
  ++size_;
  return true;
}

int CoordIndex::find(Coord c) const {
  if (keys_.empty()) return -1;
  const std::uint64_t key = pack(c);
  std::size_t slot = mix(key) & mask_;
  while (rows_[slot] >= 0) {
    if (keys_[slot] == key) return rows_[slot];
    slot = (slot + 1) & mask_;
  }
  return -1;
}

CoordinateSet::CoordinateSet(std::vector<Coord> coords, int stride)
    : coords_(std::move(coords)), stride_(stride), index_(coords_.size()) {
  if (stride < 1) throw InvalidArgument("stride must be positive");
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    const Coord c = coords_[i];
    if (c.row % stride != 0 || c.col % stride != 0) {
      throw InvalidArgument("coordinate " + pixel_name(c.row, c.col) +
                            " is not divisible by stride " + std::to_string(stride));
    }
    if (!index_.insert(c, static_cast<int>(i))) {
      throw InvalidArgument("duplicate coordinate " + pixel_name(c.row, c.col));
    }
  }
}

CoordinateSetPtr make_coordinate_set(std::vector<Coord> coords, int stride) {
  return std::make_shared<const CoordinateSet>(std::move(coords), stride);
}

template <typename T>
BasicSparseTensor<T>::BasicSparseTensor(CoordinateSetPtr coords, int channels)
    : coords_(std::move(coords)), channels_(channels) {
  if (!coords_) throw InvalidArgument("sparse tensor needs a coordinate set");
  if (channels < 1) throw InvalidArgument("sparse tensor needs at least one channel");
  feats_.assign(coords_->size() * static_cast<std::size_t>(channels), T{0});
}

template <typename T>
BasicSparseTensor<T>::BasicSparseTensor(CoordinateSetPtr coords, int channels,
                                        std::vector<T> feats)
    : coords_(std::move(coords)), channels_(channels), feats_(std::move(feats)) {
  if (!coords_) throw InvalidArgument("sparse tensor needs a coordinate set");
  if (channels < 1) throw InvalidArgument("sparse tensor needs at least one channel");
  if (feats_.size() != coords_->size() * static_cast<std::size_t>(channels)) {
    throw InvalidArgument("feature matrix has " + std::to_string(feats_.size()) +
                          " values, expected " +
                          std::to_string(coords_->size() * static_cast<std::size_t>(channels)));
  }
}

template class BasicSparseTensor<float>;
template class BasicSparseTensor<double>;

}  // namespace retrofit

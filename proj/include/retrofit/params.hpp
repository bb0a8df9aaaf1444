#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace retrofit {

// Named view onto one learnable tensor.
struct ParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> data;
};

struct ConstParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const double> data;
};

// Deterministic uniform draws in [-bound, bound) from a 64-bit Mersenne
// twister, converted via the top 53 bits.
void fill_uniform(std::span<double> out, double bound, std::uint64_t seed);

}  // namespace retrofit

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "retrofit/fusion.hpp"
#include "retrofit/refiner.hpp"

namespace retrofit {

// Everything the refinement stage learns.
struct Model {
  RefinerConfig refiner_cfg;
  RefinerParams refiner;
  FusionParams fusion;

  static Model initialize(const RefinerConfig& cfg, std::uint64_t seed);
  void check() const;
};

// Config travels as i32 tensors named config.*; weights as f64.
void write_model(std::ostream& out, const Model& m);
Model read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const Model& m);
Model load_model(const std::filesystem::path& path);

}  // namespace retrofit

#include "retrofit/model.hpp"

#include <fstream>
#include <map>

#include "retrofit/error.hpp"
#include "retrofit/tensor_file.hpp"

namespace retrofit {

namespace {

constexpr std::uint64_t kFusionSeedOffset = 0x9e3779b97f4a7c15ULL;

Tensor scalar_i32(int v) {
  const std::int32_t x = v;
  return Tensor::from_i32({1}, std::span<const std::int32_t>(&x, 1));
}

std::vector<std::uint32_t> dims_of(const std::vector<std::size_t>& shape) {
  return {shape.begin(), shape.end()};
}

}  // namespace

Model Model::initialize(const RefinerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return {cfg, RefinerParams::initialize(cfg, seed),
          FusionParams::initialize(cfg.geo_channels, seed ^ kFusionSeedOffset)};
}

void Model::check() const {
  refiner_cfg.validate();
  refiner.check(refiner_cfg);
  fusion.check(refiner_cfg.geo_channels);
}

void write_model(std::ostream& out, const Model& m) {
  m.check();
  std::vector<NamedTensor> tensors;
  const RefinerConfig& c = m.refiner_cfg;
  tensors.push_back({"config.geo_channels", scalar_i32(c.geo_channels)});
  std::vector<std::int32_t> channels(c.channels.begin(), c.channels.end());
  tensors.push_back({"config.channels",
                     Tensor::from_i32({static_cast<std::uint32_t>(channels.size())}, channels)});
  tensors.push_back({"config.kernel_size", scalar_i32(c.kernel_size)});
  tensors.push_back({"config.conf_logits", scalar_i32(c.conf_logits)});
  tensors.push_back({"config.norm", scalar_i32(static_cast<int>(c.norm))});
  tensors.push_back({"config.fusion_hidden", scalar_i32(m.fusion.hidden)});
  for (const ConstParamRef& p : m.refiner.parameters()) {
    tensors.push_back({p.name, Tensor::from_f64(dims_of(p.shape), p.data)});
  }
  for (const ConstParamRef& p : m.fusion.parameters()) {
    tensors.push_back({p.name, Tensor::from_f64(dims_of(p.shape), p.data)});
  }
  write_manifest(out, tensors);
}

Model read_model(std::istream& in) {
  std::map<std::string, Tensor> byname;
  for (NamedTensor& nt : read_manifest(in)) {
    const std::string name = nt.name;
    if (!byname.emplace(name, std::move(nt.tensor)).second) {
      throw IoError("duplicate tensor " + name + " in weight manifest");
    }
  }
  const auto take = [&byname](const std::string& name) -> Tensor& {
    auto it = byname.find(name);
    if (it == byname.end()) throw IoError("weight manifest lacks tensor " + name);
    return it->second;
  };
  const auto scalar = [&take](const std::string& name) {
    const auto v = take(name).to_i32();
    if (v.size() != 1) throw IoError(name + " must hold one value");
    return v[0];
  };

  RefinerConfig cfg;
  cfg.geo_channels = scalar("config.geo_channels");
  const auto ch = take("config.channels").to_i32();
  cfg.channels.assign(ch.begin(), ch.end());
  cfg.kernel_size = scalar("config.kernel_size");
  cfg.conf_logits = scalar("config.conf_logits");
  const int norm = scalar("config.norm");
  if (norm != static_cast<int>(NormKind::kNone) && norm != static_cast<int>(NormKind::kSiteNorm)) {
    throw IoError("unknown normalization code " + std::to_string(norm));
  }
  cfg.norm = static_cast<NormKind>(norm);
  cfg.validate();

  Model m{cfg, RefinerParams::zeros(cfg),
          FusionParams::zeros(cfg.geo_channels, scalar("config.fusion_hidden"))};
  const auto fill = [&take](const auto& refs) {
    for (const ParamRef& p : refs) {
      const Tensor& t = take(p.name);
      if (t.dims != dims_of(p.shape) || t.dtype != DType::kF64) {
        throw IoError("tensor " + p.name + " has the wrong shape or dtype");
      }
      const auto v = t.to_f64();
      std::copy(v.begin(), v.end(), p.data.begin());
    }
  };
  fill(m.refiner.parameters());
  fill(m.fusion.parameters());
  return m;
}

void save_model(const std::filesystem::path& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_model(out, m);
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_model(in);
}

}  // namespace retrofit

#include "retrofit/refiner.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "retrofit/error.hpp"
#include "retrofit/random.hpp"

namespace retrofit {

void fill_uniform(std::span<double> out, double bound, std::uint64_t seed) {
  Random rng(seed);
  for (double& v : out) v = (2.0 * rng.uniform() - 1.0) * bound;
}

namespace {

struct ChannelPlan {
  std::vector<int> enc_in, enc_out, up_in, up_out, mix_in, mix_out;
  int bottleneck = 0;
};

ChannelPlan plan_channels(const RefinerConfig& cfg) {
  const int levels = cfg.levels();
  ChannelPlan p;
  for (int l = 0; l < levels; ++l) {
    p.enc_in.push_back(l == 0 ? cfg.in_channels() : cfg.channels[static_cast<std::size_t>(l - 1)]);
    p.enc_out.push_back(cfg.channels[static_cast<std::size_t>(l)]);
  }
  p.bottleneck = cfg.channels.back();
  p.up_in.resize(static_cast<std::size_t>(levels));
  p.up_out.resize(static_cast<std::size_t>(levels));
  p.mix_in.resize(static_cast<std::size_t>(levels));
  p.mix_out.resize(static_cast<std::size_t>(levels));
  for (int l = levels - 1; l >= 0; --l) {
    const auto k = static_cast<std::size_t>(l);
    p.up_in[k] = l == levels - 1 ? p.bottleneck : p.mix_out[k + 1];
    p.up_out[k] = cfg.channels[k];
    p.mix_in[k] = p.up_out[k] + p.enc_in[k];
    p.mix_out[k] = l == 0 ? cfg.channels[0] : cfg.channels[k - 1];
  }
  return p;
}

ConvLayer make_layer(int kernel_size, int cin, int cout, bool norm) {
  ConvLayer layer{ConvParams::zeros(kernel_size, cin, cout), {}, {}};
  if (norm) {
    layer.norm_scale.assign(static_cast<std::size_t>(cout), 0.0);
    layer.norm_shift.assign(static_cast<std::size_t>(cout), 0.0);
  }
  return layer;
}

void check_layer(const ConvLayer& layer, int kernel_size, int cin, int cout, bool norm,
                 const std::string& name) {
  const auto& c = layer.conv;
  const std::size_t wsize = static_cast<std::size_t>(kernel_size * kernel_size) *
                            static_cast<std::size_t>(cin) * static_cast<std::size_t>(cout);
  if (c.kernel_size != kernel_size || c.in_channels != cin || c.out_channels != cout ||
      c.weights.size() != wsize || c.bias.size() != static_cast<std::size_t>(cout)) {
    throw InvalidArgument("refiner layer " + name + " does not match the configuration");
  }
  const std::size_t nsize = norm ? static_cast<std::size_t>(cout) : 0;
  if (layer.norm_scale.size() != nsize || layer.norm_shift.size() != nsize) {
    throw InvalidArgument("refiner layer " + name + " has wrong normalization parameters");
  }
}

template <typename Ref, typename Layer>
void append_layer(std::vector<Ref>& out, const std::string& name, Layer& layer) {
  const auto& c = layer.conv;
  const auto vol = static_cast<std::size_t>(c.kernel_size * c.kernel_size);
  const auto cin = static_cast<std::size_t>(c.in_channels);
  const auto cout = static_cast<std::size_t>(c.out_channels);
  out.push_back({name + ".weight", {vol, cin, cout}, layer.conv.weights});
  out.push_back({name + ".bias", {cout}, layer.conv.bias});
  if (!layer.norm_scale.empty()) {
    out.push_back({name + ".norm.scale", {cout}, layer.norm_scale});
    out.push_back({name + ".norm.shift", {cout}, layer.norm_shift});
  }
}

template <typename Ref, typename Params>
std::vector<Ref> collect(Params& p) {
  std::vector<Ref> out;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    append_layer(out, "enc" + std::to_string(l), p.encoder[l]);
  }
  append_layer(out, "bottleneck", p.bottleneck);
  for (std::size_t l = p.up.size(); l-- > 0;) {
    append_layer(out, "dec" + std::to_string(l) + ".up", p.up[l]);
    append_layer(out, "dec" + std::to_string(l) + ".mix", p.mix[l]);
  }
  append_layer(out, "head", p.head);
  return out;
}

SparseTensor apply_layer(const SparseTensor& x, const ConvLayer& layer, const KernelMap& km,
                         bool activate, RefinerStats* stats, LayerTrace* trace) {
  OpCounter counter;
  SparseTensor y = sparse_conv(x, layer.conv, km, &counter);
  if (!layer.norm_scale.empty()) {
    y = site_norm(y, layer.norm_scale, layer.norm_shift, trace ? &trace->norm : nullptr);
  }
  if (activate) y = relu(std::move(y));
  if (stats) {
    stats->madds += counter.madds;
    stats->kernel_pairs += km.pair_count();
  }
  if (trace) {
    trace->km = &km;
    trace->input = x;
    trace->output = y;
  }
  return y;
}

void add_into(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

SparseTensor backward_layer(const LayerTrace& t, const ConvLayer& layer, ConvLayer& grad,
                            SparseTensor g, bool activate) {
  if (activate) g = relu_backward(*t.output, std::move(g));
  if (!layer.norm_scale.empty()) {
    SiteNormGrads ng = site_norm_backward(t.norm, layer.norm_scale, g);
    add_into(grad.norm_scale, ng.scale);
    add_into(grad.norm_shift, ng.shift);
    g = std::move(ng.input);
  }
  ConvGrads cg = sparse_conv_backward(*t.input, layer.conv, *t.km, g);
  add_into(grad.conv.weights, cg.params.weights);
  add_into(grad.conv.bias, cg.params.bias);
  return std::move(cg.input);
}

SparseTensor add_tensors(const SparseTensor& a, const SparseTensor& b) {
  if (a.size() != b.size() || a.channels() != b.channels()) {
    throw InvalidArgument("gradient accumulation shape mismatch");
  }
  std::vector<double> v(a.feats().begin(), a.feats().end());
  const auto bf = b.feats();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bf[i];
  return SparseTensor(a.coordinates_ptr(), a.channels(), std::move(v));
}

}  // namespace

void RefinerConfig::validate() const {
  if (channels.empty()) throw InvalidArgument("refiner needs at least one level");
  for (int c : channels) {
    if (c < 1) throw InvalidArgument("refiner channel counts must be positive");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw InvalidArgument("refiner kernel size must be odd");
  }
  if (geo_channels < 1) throw InvalidArgument("refiner needs geometry channels");
  if (conf_logits < 2) throw InvalidArgument("refiner needs at least 2 confidence logits");
}

RefinerParams RefinerParams::zeros(const RefinerConfig& cfg) {
  cfg.validate();
  const ChannelPlan plan = plan_channels(cfg);
  const bool norm = cfg.norm == NormKind::kSiteNorm;
  const int k = cfg.kernel_size;
  RefinerParams p;
  for (int l = 0; l < cfg.levels(); ++l) {
    const auto i = static_cast<std::size_t>(l);
    p.encoder.push_back(make_layer(k, plan.enc_in[i], plan.enc_out[i], norm));
    p.up.push_back(make_layer(k, plan.up_in[i], plan.up_out[i], norm));
    p.mix.push_back(make_layer(k, plan.mix_in[i], plan.mix_out[i], norm));
  }
  p.bottleneck = make_layer(k, plan.bottleneck, plan.bottleneck, norm);
  p.head = make_layer(1, plan.mix_out[0], cfg.out_channels(), false);
  return p;
}

RefinerParams RefinerParams::initialize(const RefinerConfig& cfg, std::uint64_t seed) {
  RefinerParams p = zeros(cfg);
  std::uint64_t layer_seed = seed;
  for (ParamRef& ref : p.parameters()) {
    layer_seed = layer_seed * 6364136223846793005ULL + 1442695040888963407ULL;
    const bool is_weight = ref.name.ends_with(".weight");
    if (ref.name.starts_with("head")) continue;
    if (ref.name.ends_with(".norm.scale")) {
      for (double& v : ref.data) v = 1.0;
    } else if (is_weight) {
      const double fan_in = static_cast<double>(ref.shape[0] * ref.shape[1]);
      fill_uniform(ref.data, std::sqrt(6.0 / fan_in), layer_seed);
    }
  }
  return p;
}

void RefinerParams::check(const RefinerConfig& cfg) const {
  cfg.validate();
  const ChannelPlan plan = plan_channels(cfg);
  const bool norm = cfg.norm == NormKind::kSiteNorm;
  const int k = cfg.kernel_size;
  const auto levels = static_cast<std::size_t>(cfg.levels());
  if (encoder.size() != levels || up.size() != levels || mix.size() != levels) {
    throw InvalidArgument("refiner parameters have the wrong number of levels");
  }
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string lvl = std::to_string(l);
    check_layer(encoder[l], k, plan.enc_in[l], plan.enc_out[l], norm, "enc" + lvl);
    check_layer(up[l], k, plan.up_in[l], plan.up_out[l], norm, "dec" + lvl + ".up");
    check_layer(mix[l], k, plan.mix_in[l], plan.mix_out[l], norm, "dec" + lvl + ".mix");
  }
  check_layer(bottleneck, k, plan.bottleneck, plan.bottleneck, norm, "bottleneck");
  check_layer(head, 1, plan.mix_out[0], cfg.out_channels(), false, "head");
}

std::vector<ParamRef> RefinerParams::parameters() { return collect<ParamRef>(*this); }

std::vector<ConstParamRef> RefinerParams::parameters() const {
  return collect<ConstParamRef>(*this);
}

SparseTensor run_refiner(const SparseTensor& input, const RefinerParams& params,
                         const RefinerConfig& cfg, RefinerStats* stats, RefinerTape* tape) {
  params.check(cfg);
  if (input.stride() != 1) throw InvalidArgument("run_refiner: input stride must be 1");
  if (input.channels() != cfg.in_channels()) {
    throw InvalidArgument("run_refiner: input has " + std::to_string(input.channels()) +
                          " channels, config expects " + std::to_string(cfg.in_channels()));
  }
  if (input.size() == 0) throw InvalidArgument("run_refiner: no active sites");
  const int levels = cfg.levels();
  const int k = cfg.kernel_size;
  const auto lv = static_cast<std::size_t>(levels);

  RefinerTape local;
  RefinerTape& t = tape ? *tape : local;
  t = RefinerTape{};
  t.encoder.resize(lv);
  t.up.resize(lv);
  t.mix.resize(lv);
  const bool keep = tape != nullptr;
  const auto trace = [keep](LayerTrace& lt) { return keep ? &lt : nullptr; };
  const auto own = [&t](KernelMap km) -> const KernelMap& {
    t.maps.push_back(std::make_unique<KernelMap>(std::move(km)));
    return *t.maps.back();
  };

  t.levels.push_back(input.coordinates_ptr());
  std::vector<SparseTensor> skips;
  skips.push_back(input);
  SparseTensor current = input;
  for (int l = 0; l < levels; ++l) {
    const auto i = static_cast<std::size_t>(l);
    CoordinateSetPtr coarse = downsample_coords(*t.levels.back(), 2);
    const KernelMap& km = own(build_kernel_map(t.levels.back(), coarse, k, 2));
    t.levels.push_back(coarse);
    current = apply_layer(current, params.encoder[i], km, true, stats, trace(t.encoder[i]));
    if (l + 1 < levels) skips.push_back(current);
  }
  {
    const KernelMap& km = own(build_kernel_map(t.levels.back(), t.levels.back(), k, 1));
    current = apply_layer(current, params.bottleneck, km, true, stats, trace(t.bottleneck));
  }
  for (int l = levels - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    const KernelMap& up_km = own(build_transposed_kernel_map(t.levels[i + 1], t.levels[i], k));
    SparseTensor up = apply_layer(current, params.up[i], up_km, true, stats, trace(t.up[i]));
    SparseTensor cat = concat_channels(up, skips[i]);
    if (!keep) skips[i] = SparseTensor(skips[i].coordinates_ptr(), 1);
    const KernelMap& mix_km = own(build_kernel_map(t.levels[i], t.levels[i], k, 1));
    current = apply_layer(cat, params.mix[i], mix_km, true, stats, trace(t.mix[i]));
    if (!keep) t.maps.clear();
  }
  const KernelMap& head_km = own(build_kernel_map(t.levels[0], t.levels[0], 1, 1));
  SparseTensor out = apply_layer(current, params.head, head_km, false, stats, trace(t.head));
  if (stats) {
    stats->sites_per_level.clear();
    for (const auto& s : t.levels) stats->sites_per_level.push_back(s->size());
  }
  if (!keep) t = RefinerTape{};
  return out;
}

RefinerGrads refiner_backward(const RefinerTape& tape, const RefinerParams& params,
                              const RefinerConfig& cfg, const SparseTensor& upstream) {
  params.check(cfg);
  const int levels = cfg.levels();
  const auto lv = static_cast<std::size_t>(levels);
  if (!tape.head.output || tape.encoder.size() != lv) {
    throw InvalidArgument("refiner_backward: tape does not hold a forward pass");
  }
  if (upstream.size() != tape.head.output->size() ||
      upstream.channels() != cfg.out_channels()) {
    throw InvalidArgument("refiner_backward: upstream gradient shape mismatch");
  }
  const ChannelPlan plan = plan_channels(cfg);
  RefinerGrads grads{RefinerParams::zeros(cfg), SparseTensor(tape.levels[0], cfg.in_channels())};

  SparseTensor g = backward_layer(tape.head, params.head, grads.params.head, upstream, false);
  // Gradients arriving at skip tensors from the decoder, per level.
  std::vector<std::optional<SparseTensor>> skip_grad(lv);
  for (std::size_t l = 0; l < lv; ++l) {
    SparseTensor g_cat = backward_layer(tape.mix[l], params.mix[l], grads.params.mix[l],
                                        std::move(g), true);
    auto [g_up, g_skip] = split_channels(g_cat, plan.up_out[l]);
    skip_grad[l] = std::move(g_skip);
    g = backward_layer(tape.up[l], params.up[l], grads.params.up[l], std::move(g_up), true);
  }
  g = backward_layer(tape.bottleneck, params.bottleneck, grads.params.bottleneck, std::move(g),
                     true);
  for (std::size_t l = lv; l-- > 0;) {
    if (l + 1 < lv) g = add_tensors(g, *skip_grad[l + 1]);
    g = backward_layer(tape.encoder[l], params.encoder[l], grads.params.encoder[l], std::move(g),
                       true);
  }
  grads.input = add_tensors(g, *skip_grad[0]);
  return grads;
}

RefinerGrads refiner_backward(const SparseTensor& input, const RefinerParams& params,
                              const RefinerConfig& cfg, const SparseTensor& upstream) {
  RefinerTape tape;
  run_refiner(input, params, cfg, nullptr, &tape);
  return refiner_backward(tape, params, cfg, upstream);
}

double min_norm_variance(const RefinerTape& tape) {
  double lo = std::numeric_limits<double>::infinity();
  const auto visit = [&lo](const LayerTrace& t) {
    for (double inv : t.norm.inv_std) lo = std::min(lo, 1.0 / (inv * inv) - kSiteNormEps);
  };
  for (const auto& t : tape.encoder) visit(t);
  visit(tape.bottleneck);
  for (const auto& t : tape.up) visit(t);
  for (const auto& t : tape.mix) visit(t);
  return lo;
}

}  // namespace retrofit

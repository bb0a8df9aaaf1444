#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "retrofit/entropy.hpp"
#include "retrofit/error.hpp"
#include "retrofit/fusion.hpp"
#include "test_support.hpp"

using namespace retrofit;
using retrofit::testing::random_map;
using retrofit::testing::Rng;

namespace {

FusionParams fixed_gate() {
  FusionParams p = FusionParams::zeros(1, 2);
  p.w1 = {0.1, -0.2, 0.3, 0.4, 0.5, 0.6, 0.7, -0.8};
  p.b1 = {0.05, -0.05};
  p.w2 = {0.9, -1.1};
  p.b2 = {0.2};
  return p;
}

FusionParams random_gate(Rng& rng, int c) {
  FusionParams p = FusionParams::zeros(c, 5);
  for (ParamRef& ref : p.parameters())
    for (double& v : ref.data) v = rng.uniform(-1.0, 1.0);
  return p;
}

std::vector<double> random_vec(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("gated_fuse") {
  const std::vector<double> coarse{2.0}, delta{-0.5};
  SUBCASE("saturated gate keeps the coarse value") {
    FusionParams p = FusionParams::zeros(1);
    p.b2 = {30.0};
    const GateOutput g = gated_fuse(coarse, delta, 0.3, 0.3, p);
    CHECK(g.weight > 1.0 - 1e-12);
    CHECK(g.value[0] == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("neutral gate") {
    const GateOutput g = gated_fuse(coarse, delta, 0.3, 0.9, FusionParams::zeros(1));
    CHECK(g.weight == 0.5);
    CHECK(g.value[0] == 1.75);
  }
  SUBCASE("fixed parameters against a 30-digit evaluation") {
    // Hidden pre-activations (0.59, -0.39), logit 0.731.
    const GateOutput g = gated_fuse(coarse, delta, 0.7, 0.2, fixed_gate());
    CHECK(g.weight == doctest::Approx(0.6750246773276009).epsilon(1e-15));
    CHECK(g.value[0] == doctest::Approx(1.8375123386638005).epsilon(1e-15));
  }
  SUBCASE("non-finite input") {
    const std::vector<double> bad{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(gated_fuse(bad, delta, 0.1, 0.1, FusionParams::zeros(1)), InvalidInput);
    CHECK_THROWS_AS(gated_fuse(coarse, delta, std::nan(""), 0.1, FusionParams::zeros(1)),
                    InvalidInput);
  }
  SUBCASE("range, convexity and strategy consistency") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      const int c = trial % 2 == 0 ? 1 : 3;
      FusionParams p = random_gate(rng, c);
      for (double& v : p.w1) v *= 20.0;
      const auto co = random_vec(rng, c, -5, 5), de = random_vec(rng, c, -5, 5);
      const double hc = rng.uniform(), hd = rng.uniform();
      const GateOutput g = gated_fuse(co, de, hc, hd, p);
      CHECK(g.weight >= 0.0);
      CHECK(g.weight <= 1.0);
      for (int i = 0; i < c; ++i) {
        CHECK(std::abs(g.value[i] - co[i]) <= std::abs(de[i]));
      }
      FusionParams zero_gate = FusionParams::zeros(c, 5);
      zero_gate.b2 = {-800.0};
      const auto direct = direct_replace(co, de);
      const GateOutput w0 = gated_fuse(co, de, hc, hd, zero_gate);
      for (int i = 0; i < c; ++i) CHECK(w0.value[i] == direct[i]);
      zero_gate.b2 = {800.0};
      const GateOutput w1 = gated_fuse(co, de, hc, hd, zero_gate);
      for (int i = 0; i < c; ++i) CHECK(w1.value[i] == co[i]);
    }
  }
  SUBCASE("gate stays strictly inside (0, 1) at moderate logits") {
    FusionParams p = FusionParams::zeros(1);
    for (double b : {-30.0, -5.0, 0.0, 5.0, 30.0}) {
      p.b2 = {b};
      const double w = gated_fuse(coarse, delta, 0.5, 0.5, p).weight;
      CHECK(w > 0.0);
      CHECK(w < 1.0);
    }
  }
}

TEST_CASE("baseline fusers") {
  CHECK(direct_replace(std::vector<double>{1.0}, std::vector<double>{0.0})[0] == 1.0);
  CHECK(direct_replace(std::vector<double>{1.0}, std::vector<double>{0.25})[0] == 1.25);

  const std::vector<double> c{2.0}, d{1.0};
  CHECK(entropy_weight_fuse(c, d, 0.4, 0.4).weight == doctest::Approx(0.5).epsilon(1e-7));
  const GateOutput uncertain = entropy_weight_fuse(c, d, 1.0, 0.0);
  CHECK(uncertain.weight == 0.0);
  CHECK(uncertain.value[0] == 3.0);
  // w = 0.3 / (0.9 + 1e-8), value = 2 + (1 - w) * 1.
  const GateOutput e = entropy_weight_fuse(c, d, 0.6, 0.3);
  CHECK(e.weight == doctest::Approx(0.33333332962962967).epsilon(1e-15));
  CHECK(e.value[0] == doctest::Approx(2.6666666703703703).epsilon(1e-15));

  CHECK(parse_fusion_strategy("entropy") == FusionStrategy::kEntropy);
  CHECK_THROWS_AS(parse_fusion_strategy("bilateral"), InvalidArgument);
}

TEST_CASE("fusion_backward") {
  SUBCASE("zero upstream") {
    Rng rng(1);
    const FusionParams p = random_gate(rng, 3);
    FusionParams grads = FusionParams::zeros(3, 5);
    const std::vector<double> zero(3, 0.0);
    const GateGrads g =
        fusion_backward(random_vec(rng, 3), random_vec(rng, 3), 0.2, 0.7, p, zero, grads);
    for (const ConstParamRef& ref : std::as_const(grads).parameters())
      for (double v : ref.data) CHECK(v == 0.0);
    for (double v : g.delta) CHECK(v == 0.0);
    CHECK(g.h_delta == 0.0);
  }
  SUBCASE("neutral gate scalar case") {
    // w = 0.5: dv/ddelta = 0.5, dv/db2 = -delta * w * (1 - w).
    FusionParams grads = FusionParams::zeros(1);
    const std::vector<double> c{2.0}, d{-0.5}, up{3.0};
    const GateGrads g = fusion_backward(c, d, 0.1, 0.2, FusionParams::zeros(1), up, grads);
    CHECK(g.delta[0] == 1.5);
    CHECK(g.coarse[0] == 3.0);
    CHECK(grads.b2[0] == 3.0 * 0.5 * 0.25);
  }
  SUBCASE("finite differences, C = 3") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
      FusionParams p = random_gate(rng, 3);
      auto co = random_vec(rng, 3, -2, 2), de = random_vec(rng, 3, -2, 2);
      double hc = rng.uniform(), hd = rng.uniform();
      const auto up = random_vec(rng, 3);
      FusionParams grads = FusionParams::zeros(3, 5);
      const GateGrads g = fusion_backward(co, de, hc, hd, p, up, grads);
      const auto loss = [&] {
        const GateOutput o = gated_fuse(co, de, hc, hd, p);
        double s = 0.0;
        for (int i = 0; i < 3; ++i) s += o.value[i] * up[i];
        return s;
      };
      const auto numeric = [&](double& v) {
        const double v0 = v;
        v = v0 + 1e-4;
        const double lp = loss();
        v = v0 - 1e-4;
        const double lm = loss();
        v = v0;
        return (lp - lm) / 2e-4;
      };
      const auto agree = [](double a, double n) {
        return std::abs(a - n) <= 1e-4 * std::max(std::abs(a), std::abs(n)) + 1e-6;
      };
      auto refs = p.parameters();
      const auto grefs = std::as_const(grads).parameters();
      for (std::size_t t = 0; t < refs.size(); ++t)
        for (std::size_t i = 0; i < refs[t].data.size(); ++i)
          CHECK(agree(grefs[t].data[i], numeric(refs[t].data[i])));
      for (int i = 0; i < 3; ++i) {
        CHECK(agree(g.coarse[i], numeric(co[i])));
        CHECK(agree(g.delta[i], numeric(de[i])));
      }
      CHECK(agree(g.h_coarse, numeric(hc)));
      CHECK(agree(g.h_delta, numeric(hd)));
    }
  }
}

TEST_CASE("apply_fusion_to_map") {
  Rng rng(7);
  const DenseMap coarse = random_map(rng, 6, 7, 1, MapKind::kDepth, 1.0, 3.0);
  const DenseMap h = random_map(rng, 6, 7, 1, MapKind::kEntropy);
  PixelSelection sel;
  sel.height = 6;
  sel.width = 7;
  sel.coords = {{0, 1}, {1, 1}, {2, 5}, {4, 0}, {5, 6}};
  sel.is_core = {1, 0, 1, 1, 0};
  std::vector<double> feats(sel.size() * 5);
  for (double& v : feats) v = rng.uniform(-1.0, 1.0);
  const SparseTensor refined(make_coordinate_set(sel.coords, 1), 5, feats);
  const FusionParams params = random_gate(rng, 1);

  SUBCASE("empty core") {
    PixelSelection none = sel;
    none.is_core.assign(sel.size(), 0);
    const FusedMap out = apply_fusion_to_map(coarse, none, refined, h, params, FusionStrategy::kGated);
    CHECK(bitwise_equal(out.map, coarse));
  }
  SUBCASE("zero residual leaves the map unchanged") {
    std::vector<double> z = feats;
    for (std::size_t i = 0; i < sel.size(); ++i) z[i * 5] = 0.0;
    const SparseTensor flat(refined.coordinates_ptr(), 5, z);
    for (auto s : {FusionStrategy::kGated, FusionStrategy::kDirect, FusionStrategy::kEntropy}) {
      CHECK(bitwise_equal(apply_fusion_to_map(coarse, sel, flat, h, params, s).map, coarse));
    }
  }
  SUBCASE("only core pixels change, each by its own gate") {
    const FusedMap out = apply_fusion_to_map(coarse, sel, refined, h, params, FusionStrategy::kGated);
    REQUIRE(out.core.size() == 3);
    int changed = 0;
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 7; ++c) changed += out.map.at(r, c) != coarse.at(r, c);
    CHECK(changed == 3);
    for (std::size_t i = 0; i < sel.size(); ++i) {
      if (!sel.is_core[i]) continue;
      const Coord p = sel.coords[i];
      const std::span<const double> row(&feats[i * 5], 5);
      const double hd = normalized_entropy(row.subspan(1));
      const GateOutput g = gated_fuse(coarse.pixel(p.row, p.col), row.first(1), h.at(p.row, p.col),
                                      hd, params);
      CHECK(out.map.at(p.row, p.col) == g.value[0]);
    }
  }
  SUBCASE("missing refined row names the pixel") {
    const SparseTensor partial(make_coordinate_set({{0, 1}, {2, 5}}, 1), 5);
    try {
      apply_fusion_to_map(coarse, sel, partial, h, params, FusionStrategy::kGated);
      FAIL("expected Inconsistency");
    } catch (const Inconsistency& e) {
      CHECK(std::string(e.what()).find("(4, 0)") != std::string::npos);
    }
  }
  SUBCASE("deterministic") {
    const auto a = apply_fusion_to_map(coarse, sel, refined, h, params, FusionStrategy::kGated);
    const auto b = apply_fusion_to_map(coarse, sel, refined, h, params, FusionStrategy::kGated);
    CHECK(bitwise_equal(a.map, b.map));
  }
}

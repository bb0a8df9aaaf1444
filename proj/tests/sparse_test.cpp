#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>

#include "retrofit/error.hpp"
#include "retrofit/kernel_map.hpp"
#include "retrofit/refiner.hpp"
#include "retrofit/sparse_ops.hpp"
#include "retrofit/sparse_tensor.hpp"
#include "conv_oracle.hpp"
#include "test_support.hpp"

using namespace retrofit;
using retrofit::testing::Rng;
using retrofit::testing::dense_conv_oracle;
using retrofit::testing::random_conv;
using retrofit::testing::random_coords;
using retrofit::testing::random_tensor;

namespace {

bool bitwise_same(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void randomize(RefinerParams& p, Rng& rng) {
  for (ParamRef& ref : p.parameters()) {
    const bool scale = ref.name.find("norm.scale") != std::string::npos;
    for (double& v : ref.data) v = scale ? rng.uniform(0.5, 1.5) : rng.uniform(-0.6, 0.6);
  }
}

double weighted_output(const SparseTensor& out, const SparseTensor& upstream) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.feats().size(); ++i) s += out.feats()[i] * upstream.feats()[i];
  return s;
}

}  // namespace

TEST_CASE("CoordinateSet and index") {
  const auto set = make_coordinate_set({{0, 0}, {4, 2}, {-2, 6}}, 2);
  CHECK(set->size() == 3);
  for (std::size_t i = 0; i < set->size(); ++i) CHECK(set->find((*set)[i]) == static_cast<int>(i));
  CHECK(set->find({2, 2}) == -1);
  CHECK(set->index().size() == 3);
  CHECK_THROWS_AS(make_coordinate_set({{1, 0}}, 2), InvalidArgument);
  CHECK_THROWS_AS(make_coordinate_set({{0, 0}, {0, 0}}, 1), InvalidArgument);

  CoordIndex index;
  Rng rng(1);
  const auto coords = random_coords(rng, 300, 300, 5000);
  for (std::size_t i = 0; i < coords.size(); ++i) CHECK(index.insert(coords[i], static_cast<int>(i)));
  CHECK_FALSE(index.insert(coords[7], 99));
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (index.find(coords[i]) != static_cast<int>(i)) FAIL("index lost a coordinate");
  }
}

TEST_CASE("build_kernel_map") {
  SUBCASE("isolated site") {
    const auto s = make_coordinate_set({{3, 3}}, 1);
    const KernelMap km = build_kernel_map(s, s, 3, 1);
    CHECK(km.pair_count() == 1);
    CHECK(km.pair_count(4) == 1);
    CHECK(km.offset(4).dy == 0);
    CHECK(km.offset(4).dx == 0);
  }
  SUBCASE("horizontal neighbours") {
    const auto s = make_coordinate_set({{0, 0}, {0, 1}}, 1);
    const KernelMap km = build_kernel_map(s, s, 3, 1);
    CHECK(km.pair_count() == 4);
    CHECK(km.pair_count(4) == 2);
    CHECK(km.pairs(3) == std::vector<std::pair<int, int>>{{0, 1}});  // (0, -1)
    CHECK(km.pairs(5) == std::vector<std::pair<int, int>>{{1, 0}});  // (0, +1)
  }
  SUBCASE("random 12x12 pattern against an exhaustive scan") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
      const auto coords = random_coords(rng, 12, 12, 20);
      const auto s = make_coordinate_set(coords, 1);
      for (int k : {1, 3, 5}) {
        const KernelMap km = build_kernel_map(s, s, k, 1);
        std::multiset<std::tuple<int, int, int>> got, oracle;
        for (int o = 0; o < k * k; ++o)
          for (auto [in, out] : km.pairs(o)) got.insert({o, in, out});
        const int half = k / 2;
        for (std::size_t u = 0; u < coords.size(); ++u) {
          for (int dy = -half; dy <= half; ++dy) {
            for (int dx = -half; dx <= half; ++dx) {
              for (std::size_t v = 0; v < coords.size(); ++v) {
                if (coords[v] == Coord{coords[u].row + dy, coords[u].col + dx}) {
                  oracle.insert({(dy + half) * k + dx + half, static_cast<int>(v),
                                 static_cast<int>(u)});
                }
              }
            }
          }
        }
        CHECK(got == oracle);
      }
    }
  }
  SUBCASE("errors") {
    const auto s = make_coordinate_set({{0, 0}}, 1);
    CHECK_THROWS_AS(build_kernel_map(s, s, 2, 1), InvalidArgument);
    CHECK_THROWS_AS(build_kernel_map(s, s, 3, 2), InvalidArgument);
  }
}

TEST_CASE("downsample_coords") {
  CHECK(std::ranges::equal(downsample_coords(*make_coordinate_set({{0, 0}, {1, 1}}, 1))->coords(),
                           std::vector<Coord>{{0, 0}}));
  CHECK(std::ranges::equal(downsample_coords(*make_coordinate_set({{0, 0}, {2, 0}}, 1))->coords(),
                           std::vector<Coord>{{0, 0}, {2, 0}}));
  Rng rng(30);
  for (int stride : {1, 2, 4}) {
    const auto coords = random_coords(rng, 20, 20, 30, stride);
    std::vector<Coord> shifted;
    for (Coord c : coords) shifted.push_back({c.row - 40 * stride, c.col});
    for (const auto& input : {coords, shifted}) {
      const auto down = downsample_coords(*make_coordinate_set(input, stride));
      const int g = 2 * stride;
      std::set<Coord> oracle;
      for (Coord c : input) {
        const auto fdiv = [g](int v) { return static_cast<int>(std::floor(double(v) / g)) * g; };
        oracle.insert({fdiv(c.row), fdiv(c.col)});
      }
      CHECK(std::ranges::equal(down->coords(), std::vector<Coord>(oracle.begin(), oracle.end())));
      CHECK(down->stride() == g);
    }
  }
}

TEST_CASE("transposed map has exactly the strided pairs") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const auto fine = make_coordinate_set(random_coords(rng, 16, 16, 60, 2), 2);
    const auto coarse = downsample_coords(*fine);
    const KernelMap down = build_kernel_map(fine, coarse, 3, 2);
    const KernelMap up = build_transposed_kernel_map(coarse, fine, 3);
    CHECK(up.transposed());
    for (int o = 0; o < 9; ++o) {
      std::set<std::pair<int, int>> a, b;
      for (auto [in, out] : down.pairs(o)) a.insert({out, in});
      for (auto [in, out] : up.pairs(o)) b.insert({in, out});
      CHECK(a == b);
    }
  }
}

TEST_CASE("sparse_conv") {
  SUBCASE("identity kernel") {
    Rng rng(2);
    const auto s = make_coordinate_set(random_coords(rng, 8, 8, 15), 1);
    const SparseTensor x = random_tensor<double>(rng, s, 4);
    auto p = ConvParams::zeros(3, 4, 4);
    for (int c = 0; c < 4; ++c) p.w(4, c, c) = 1.0;
    const SparseTensor y = sparse_conv(x, p, build_kernel_map(s, s, 3, 1));
    CHECK(bitwise_same(y.feats(), x.feats()));
  }
  SUBCASE("isolated site") {
    Rng rng(3);
    const auto s = make_coordinate_set({{5, 5}}, 1);
    const SparseTensor x = random_tensor<double>(rng, s, 3);
    const ConvParams p = random_conv<double>(rng, 3, 3, 2);
    const SparseTensor y = sparse_conv(x, p, build_kernel_map(s, s, 3, 1));
    for (int co = 0; co < 2; ++co) {
      double expect = p.bias[static_cast<std::size_t>(co)];
      for (int ci = 0; ci < 3; ++ci) expect += p.w(4, ci, co) * x.row(0)[ci];
      CHECK(y.row(0)[co] == doctest::Approx(expect).epsilon(1e-15));
    }
  }
  SUBCASE("dense equivalence in double and single precision") {
    Rng rng(2025);
    for (int trial = 0; trial < 60; ++trial) {
      const int extent = rng.integer(2, 16);
      const int k = trial % 2 == 0 ? 3 : 5;
      const int cin = rng.integer(1, 8), cout = rng.integer(1, 8);
      const int count = rng.integer(1, extent * extent / 2 + 1);
      const bool strided = trial % 3 == 0;
      const auto in = make_coordinate_set(random_coords(rng, extent, extent, count), 1);
      const auto out = strided ? downsample_coords(*in) : in;
      const KernelMap km = build_kernel_map(in, out, k, strided ? 2 : 1);

      const SparseTensor x = random_tensor<double>(rng, in, cin);
      const ConvParams p = random_conv<double>(rng, k, cin, cout);
      OpCounter counter;
      const SparseTensor y = sparse_conv(x, p, km, &counter);
      const auto oracle = dense_conv_oracle(x, p, *out, extent);
      REQUIRE(y.feats().size() == oracle.size());
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        if (std::abs(y.feats()[i] - oracle[i]) > 1e-12) FAIL("double mismatch at " << i);
      }
      std::uint64_t expected_madds = 0;
      for (int o = 0; o < k * k; ++o) {
        expected_madds += km.pair_count(o) * static_cast<std::uint64_t>(cin * cout);
      }
      CHECK(counter.madds == expected_madds);
      CHECK(conv_madds(km, cin, cout) == expected_madds);

      const SparseTensorF xf = random_tensor<float>(rng, in, cin);
      const auto pf = random_conv<float>(rng, k, cin, cout);
      const SparseTensorF yf = sparse_conv(xf, pf, km);
      const auto oracle_f = dense_conv_oracle(xf, pf, *out, extent);
      for (std::size_t i = 0; i < oracle_f.size(); ++i) {
        if (std::abs(yf.feats()[i] - oracle_f[i]) > 1e-5) FAIL("single mismatch at " << i);
      }
    }
  }
  SUBCASE("permutation equivariance") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
      const auto coords = random_coords(rng, 14, 14, 40);
      std::vector<std::size_t> perm(coords.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      std::vector<Coord> permuted;
      for (std::size_t i : perm) permuted.push_back(coords[i]);

      const auto a = make_coordinate_set(coords, 1);
      const auto b = make_coordinate_set(permuted, 1);
      const SparseTensor xa = random_tensor<double>(rng, a, 3);
      std::vector<double> fb;
      for (std::size_t i : perm) fb.insert(fb.end(), xa.row(i).begin(), xa.row(i).end());
      const SparseTensor xb(b, 3, fb);
      const ConvParams p = random_conv<double>(rng, 3, 3, 5);
      const SparseTensor ya = sparse_conv(xa, p, build_kernel_map(a, a, 3, 1));
      const SparseTensor yb = sparse_conv(xb, p, build_kernel_map(b, b, 3, 1));
      for (std::size_t j = 0; j < perm.size(); ++j) {
        CHECK(bitwise_same(yb.row(j), ya.row(perm[j])));
      }
    }
  }
  SUBCASE("shape mismatch") {
    const auto s = make_coordinate_set({{0, 0}}, 1);
    const SparseTensor x(s, 3);
    CHECK_THROWS_AS(sparse_conv(x, ConvParams::zeros(3, 2, 1), build_kernel_map(s, s, 3, 1)),
                    InvalidArgument);
  }
}

TEST_CASE("sparse_conv_backward against finite differences") {
  Rng rng(31);
  const auto in = make_coordinate_set(random_coords(rng, 6, 6, 10), 1);
  const auto out = downsample_coords(*in);
  const KernelMap km = build_kernel_map(in, out, 3, 2);
  SparseTensor x = random_tensor<double>(rng, in, 2);
  ConvParams p = random_conv<double>(rng, 3, 2, 3);
  const SparseTensor g = random_tensor<double>(rng, out, 3);
  const ConvGrads grads = sparse_conv_backward(x, p, km, g);
  const auto loss = [&] { return weighted_output(sparse_conv(x, p, km), g); };
  // The loss is linear in every argument, so a central difference is exact up to rounding.
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    const double w0 = p.weights[i];
    p.weights[i] = w0 + 1e-4;
    const double lp = loss();
    p.weights[i] = w0 - 1e-4;
    const double lm = loss();
    p.weights[i] = w0;
    CHECK(grads.params.weights[i] == doctest::Approx((lp - lm) / 2e-4).epsilon(1e-8));
  }
  for (std::size_t i = 0; i < x.feats().size(); ++i) {
    const double v0 = x.feats()[i];
    x.mutable_feats()[i] = v0 + 1e-4;
    const double lp = loss();
    x.mutable_feats()[i] = v0 - 1e-4;
    const double lm = loss();
    x.mutable_feats()[i] = v0;
    CHECK(grads.input.feats()[i] == doctest::Approx((lp - lm) / 2e-4).epsilon(1e-8));
  }
}

TEST_CASE("site_norm") {
  SUBCASE("single site yields shift") {
    const SparseTensor x(make_coordinate_set({{0, 0}}, 1), 2, {3.0, -7.0});
    const std::vector<double> scale{2.0, 5.0}, shift{0.25, -1.5};
    const SparseTensor y = site_norm(x, scale, shift);
    CHECK(y.row(0)[0] == 0.25);
    CHECK(y.row(0)[1] == -1.5);
  }
  SUBCASE("symmetric pair") {
    const SparseTensor x(make_coordinate_set({{0, 0}, {0, 1}}, 1), 1, {-1.0, 1.0});
    const std::vector<double> scale{1.0}, shift{0.0};
    const SparseTensor y = site_norm(x, scale, shift);
    CHECK(y.row(0)[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-15));
    CHECK(y.row(1)[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-15));
  }
  SUBCASE("20 sites against two-pass statistics") {
    Rng rng(20);
    const auto s = make_coordinate_set(random_coords(rng, 10, 10, 20), 1);
    const SparseTensor x = random_tensor<double>(rng, s, 3);
    const std::vector<double> scale{0.5, 1.0, 2.0}, shift{0.1, 0.0, -0.3};
    const SparseTensor y = site_norm(x, scale, shift);
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 20; ++i) mean += x.row(i)[c];
      mean /= 20.0;
      double var = 0.0;
      for (std::size_t i = 0; i < 20; ++i) var += (x.row(i)[c] - mean) * (x.row(i)[c] - mean);
      var /= 20.0;
      for (std::size_t i = 0; i < 20; ++i) {
        const double expect = scale[c] * (x.row(i)[c] - mean) / std::sqrt(var + 1e-5) + shift[c];
        CHECK(y.row(i)[c] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("refiner forward contracts") {
  Rng rng(100);
  RefinerConfig cfg;
  const auto coords = make_coordinate_set(random_coords(rng, 24, 24, 120), 1);
  const SparseTensor x = random_tensor<double>(rng, coords, cfg.in_channels());

  SUBCASE("zero head emits no correction") {
    RefinerParams p = RefinerParams::initialize(cfg, 5);
    p.head.conv.bias = {0.0, 0.5, -0.5, 1.0, 2.0};
    const SparseTensor y = run_refiner(x, p, cfg);
    CHECK(y.coordinates_ptr() == coords);
    CHECK(y.size() == x.size());
    CHECK(y.channels() == 5);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y.row(i)[0] == 0.0);
      for (int c = 1; c < 5; ++c) CHECK(y.row(i)[c] == p.head.conv.bias[static_cast<std::size_t>(c)]);
    }
  }
  SUBCASE("coordinate caching") {
    RefinerParams p = RefinerParams::initialize(cfg, 6);
    RefinerTape tape;
    RefinerStats stats;
    run_refiner(x, p, cfg, &stats, &tape);
    REQUIRE(tape.levels.size() == 3);
    for (int l = 0; l < cfg.levels(); ++l) {
      const auto i = static_cast<std::size_t>(l);
      CHECK(tape.up[i].output->coordinates_ptr() == tape.encoder[i].input->coordinates_ptr());
      CHECK(std::ranges::equal(tape.mix[i].output->coordinates().coords(),
                               tape.encoder[i].input->coordinates().coords()));
    }
    CHECK(stats.sites_per_level.size() == 3);
    CHECK(stats.sites_per_level[0] == 120);

    // Counter equals the sum over every kernel map of pairs * C_in * C_out.
    std::uint64_t expected = 0;
    const auto add = [&](const LayerTrace& t, const ConvLayer& layer) {
      expected += conv_madds(*t.km, layer.conv.in_channels, layer.conv.out_channels);
    };
    for (std::size_t l = 0; l < 2; ++l) {
      add(tape.encoder[l], p.encoder[l]);
      add(tape.up[l], p.up[l]);
      add(tape.mix[l], p.mix[l]);
    }
    add(tape.bottleneck, p.bottleneck);
    add(tape.head, p.head);
    CHECK(stats.madds == expected);
  }
  SUBCASE("translation equivariance") {
    RefinerParams p = RefinerParams::initialize(cfg, 7);
    randomize(p, rng);
    const SparseTensor y = run_refiner(x, p, cfg);
    for (Coord shift : {Coord{8, 4}, Coord{-40, 1000}}) {
      std::vector<Coord> moved;
      for (Coord c : coords->coords()) moved.push_back({c.row + shift.row, c.col + shift.col});
      const SparseTensor xs(make_coordinate_set(moved, 1), x.channels(),
                            std::vector<double>(x.feats().begin(), x.feats().end()));
      CHECK(bitwise_same(run_refiner(xs, p, cfg).feats(), y.feats()));
    }
  }
  SUBCASE("configuration mismatch") {
    RefinerParams p = RefinerParams::initialize(cfg, 1);
    RefinerConfig other = cfg;
    other.channels = {8, 16};
    CHECK_THROWS_AS(run_refiner(x, p, other), InvalidArgument);
    const SparseTensor narrow(coords, 3);
    CHECK_THROWS_AS(run_refiner(narrow, p, cfg), InvalidArgument);
  }
}

TEST_CASE("single-site refiner equals the per-site matrix chain") {
  Rng rng(55);
  RefinerConfig cfg;
  cfg.channels = {3};
  cfg.norm = NormKind::kNone;
  RefinerParams p = RefinerParams::initialize(cfg, 2);
  randomize(p, rng);
  const auto site = make_coordinate_set({{6, 10}}, 1);
  const SparseTensor x = random_tensor<double>(rng, site, cfg.in_channels());
  const int centre = cfg.kernel_size * cfg.kernel_size / 2;

  const auto affine = [&](const ConvParams& c, const std::vector<double>& v, bool rectify) {
    std::vector<double> out(static_cast<std::size_t>(c.out_channels));
    const int mid = c.kernel_size == 1 ? 0 : centre;
    for (int co = 0; co < c.out_channels; ++co) {
      double acc = c.bias[static_cast<std::size_t>(co)];
      for (int ci = 0; ci < c.in_channels; ++ci) acc += c.w(mid, ci, co) * v[static_cast<std::size_t>(ci)];
      out[static_cast<std::size_t>(co)] = rectify ? std::max(acc, 0.0) : acc;
    }
    return out;
  };
  const std::vector<double> in(x.feats().begin(), x.feats().end());
  const auto e = affine(p.encoder[0].conv, in, true);
  const auto b = affine(p.bottleneck.conv, e, true);
  auto u = affine(p.up[0].conv, b, true);
  u.insert(u.end(), in.begin(), in.end());
  const auto m = affine(p.mix[0].conv, u, true);
  const auto h = affine(p.head.conv, m, false);

  const SparseTensor y = run_refiner(x, p, cfg);
  for (std::size_t c = 0; c < h.size(); ++c) {
    CHECK(y.feats()[c] == doctest::Approx(h[c]).epsilon(1e-14));
  }
}

TEST_CASE("refiner_backward") {
  SUBCASE("zero upstream gives zero gradients") {
    Rng rng(8);
    RefinerConfig cfg;
    RefinerParams p = RefinerParams::initialize(cfg, 3);
    randomize(p, rng);
    const auto s = make_coordinate_set(random_coords(rng, 8, 8, 12), 1);
    const SparseTensor x = random_tensor<double>(rng, s, cfg.in_channels());
    const RefinerGrads g = refiner_backward(x, p, cfg, SparseTensor(s, cfg.out_channels()));
    for (const ConstParamRef& ref : std::as_const(g.params).parameters()) {
      for (double v : ref.data) CHECK(v == 0.0);
    }
    for (double v : g.input.feats()) CHECK(v == 0.0);
  }
  SUBCASE("single 1x1 layer scalar chain") {
    const auto s = make_coordinate_set({{0, 0}}, 1);
    const SparseTensor x(s, 1, {1.5});
    ConvParams p = ConvParams::zeros(1, 1, 1);
    p.weights = {-0.75};
    const SparseTensor g(s, 1, {2.0});
    const ConvGrads cg = sparse_conv_backward(x, p, build_kernel_map(s, s, 1, 1), g);
    CHECK(cg.params.weights[0] == 1.5 * 2.0);
    CHECK(cg.params.bias[0] == 2.0);
    CHECK(cg.input.feats()[0] == -0.75 * 2.0);
  }
  SUBCASE("random tiny networks against central differences") {
    Rng rng(4242);
    int checked = 0;
    int accepted = 0;
    for (int trial = 0; accepted < 24; ++trial) {
      RefinerConfig cfg;
      cfg.geo_channels = trial % 3 == 0 ? 3 : 1;
      cfg.channels = {4};
      cfg.norm = trial % 4 == 3 ? NormKind::kNone : NormKind::kSiteNorm;
      RefinerParams p = RefinerParams::initialize(cfg, static_cast<std::uint64_t>(trial));
      randomize(p, rng);
      const int n = rng.integer(2, 10);
      const auto s = make_coordinate_set(random_coords(rng, 5, 5, n), 1);
      SparseTensor x = random_tensor<double>(rng, s, cfg.in_channels());
      const SparseTensor up = random_tensor<double>(rng, s, cfg.out_channels());
      // A central difference with step 1e-4 is only accurate when no site_norm
      // channel is close to zero variance, so such draws are discarded.
      RefinerTape tape;
      run_refiner(x, p, cfg, nullptr, &tape);
      if (cfg.norm == NormKind::kSiteNorm && min_norm_variance(tape) < 1e-2) continue;
      ++accepted;
      const RefinerGrads g = refiner_backward(tape, p, cfg, up);

      const auto loss = [&] { return weighted_output(run_refiner(x, p, cfg), up); };
      // Relative 1e-4 with an absolute floor: near-zero entries still carry the
      // O(h^2) truncation term of the central difference.
      const auto agree = [](double analytic, double numeric) {
        return std::abs(analytic - numeric) <=
               1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-6;
      };
      constexpr double h = 1e-4;
      auto params = p.parameters();
      const auto grads = std::as_const(g.params).parameters();
      int bad = 0, total = 0;
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].data.size(); ++i) {
          const double v0 = params[t].data[i];
          params[t].data[i] = v0 + h;
          const double lp = loss();
          params[t].data[i] = v0 - h;
          const double lm = loss();
          params[t].data[i] = v0;
          ++total;
          if (!agree(grads[t].data[i], (lp - lm) / (2 * h))) {
            ++bad;
            MESSAGE(params[t].name << "[" << i << "] analytic " << grads[t].data[i]
                                   << " numeric " << (lp - lm) / (2 * h));
          }
        }
      }
      for (std::size_t i = 0; i < x.feats().size(); ++i) {
        const double v0 = x.feats()[i];
        x.mutable_feats()[i] = v0 + h;
        const double lp = loss();
        x.mutable_feats()[i] = v0 - h;
        const double lm = loss();
        x.mutable_feats()[i] = v0;
        ++total;
        if (!agree(g.input.feats()[i], (lp - lm) / (2 * h))) ++bad;
      }
      CHECK(bad == 0);
      checked += total;
    }
    CHECK(checked > 1000);
  }
}

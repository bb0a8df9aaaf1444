#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "retrofit/entropy.hpp"
#include "retrofit/error.hpp"
#include "retrofit/export.hpp"
#include "retrofit/model.hpp"
#include "retrofit/pipeline.hpp"
#include "retrofit/resample.hpp"
#include "retrofit/scene.hpp"
#include "retrofit/tensor_file.hpp"
#include "test_support.hpp"

using namespace retrofit;
using retrofit::testing::Rng;
using retrofit::testing::random_map;

namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("retrofit_pipeline_test_" + std::to_string(getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string bytes_of(const Tensor& t) {
  std::ostringstream out;
  write_tensor(out, t);
  return out.str();
}

// Small model with a non-zero head so the pipeline actually changes pixels.
Model perturbed_model(std::uint64_t seed, int geo_channels = 1) {
  RefinerConfig cfg;
  cfg.geo_channels = geo_channels;
  cfg.channels = {4, 8};
  Model m = Model::initialize(cfg, seed);
  Rng rng(seed + 17);
  for (const ParamRef& p : m.refiner.parameters()) {
    if (p.name.rfind("head.", 0) == 0) {
      for (double& v : p.data) v = rng.uniform(-0.05, 0.05);
    }
  }
  return m;
}

struct Fixture {
  SceneSample scene;
  BackboneOutput backbone;
};

Fixture small_fixture(std::uint64_t seed, GeometryKind kind = GeometryKind::kDepth) {
  SceneConfig sc;
  sc.height = 96;
  sc.width = 128;
  sc.n_objects = 8;
  sc.kind = kind;
  SceneSample scene = synth_scene(seed, sc);
  BackboneConfig bc;
  bc.long_side = 32;
  bc.seed = seed + 1;
  BackboneOutput bb = synthetic_backbone(scene, bc);
  return {std::move(scene), std::move(bb)};
}

}  // namespace

TEST_CASE("tensor file header layout") {
  const std::vector<double> v{1.0, -2.5};
  const std::string b = bytes_of(Tensor::from_f64({2}, v));
  REQUIRE(b.size() == 4 + 2 + 1 + 1 + 4 + 16);
  CHECK(b.substr(0, 4) == "RTFT");
  CHECK(static_cast<unsigned char>(b[4]) == 1);  // version, little-endian u16
  CHECK(static_cast<unsigned char>(b[5]) == 0);
  CHECK(static_cast<unsigned char>(b[6]) == 2);  // f64
  CHECK(static_cast<unsigned char>(b[7]) == 1);  // ndim
  CHECK(static_cast<unsigned char>(b[8]) == 2);
  CHECK(b[9] == 0);
  CHECK(b[10] == 0);
  CHECK(b[11] == 0);
  // 1.0 = 0x3FF0000000000000 stored little-endian.
  const unsigned char one[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  CHECK(std::memcmp(b.data() + 12, one, 8) == 0);
}

TEST_CASE("tensor file round trips are bit-exact") {
  Rng rng(3);
  std::vector<double> d(60);
  for (double& x : d) x = rng.uniform(-1e6, 1e6);
  d[0] = std::numeric_limits<double>::quiet_NaN();
  d[1] = -0.0;
  d[2] = std::numeric_limits<double>::denorm_min();
  std::vector<std::int32_t> ints{0, -1, 2147483647, -2147483647 - 1, 42, 7};
  std::vector<std::uint8_t> bytes{0, 1, 254, 255};
  const std::vector<Tensor> ts{Tensor::from_f64({3, 4, 5}, d), Tensor::from_f32({60}, d),
                               Tensor::from_i32({2, 3}, ints), Tensor::from_u8({4}, bytes),
                               Tensor::from_f64({0}, {})};
  for (const Tensor& t : ts) {
    std::stringstream io;
    write_tensor(io, t);
    CHECK(io.str().size() == encoded_size(t));
    const Tensor back = read_tensor(io);
    CHECK(back.dtype == t.dtype);
    CHECK(back.dims == t.dims);
    CHECK(back.payload == t.payload);
    CHECK(bytes_of(back) == bytes_of(t));
  }
  CHECK(ts[2].to_i32() == ints);
  const auto widened = ts[0].to_f64();
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(std::bit_cast<std::uint64_t>(widened[i]) == std::bit_cast<std::uint64_t>(d[i]));
  }
}

TEST_CASE("tensor file rejects bad input") {
  std::string b = bytes_of(Tensor::from_f64({1}, std::vector<double>{1.0}));
  std::string bad = b;
  bad[0] = 'X';
  std::istringstream s1(bad);
  CHECK_THROWS_AS(read_tensor(s1), IoError);
  std::istringstream s2(b.substr(0, b.size() - 3));
  CHECK_THROWS_AS(read_tensor(s2), IoError);
  bad = b;
  bad[6] = 9;
  std::istringstream s3(bad);
  CHECK_THROWS_AS(read_tensor(s3), IoError);
  bad = b;
  bad[4] = 2;
  std::istringstream s4(bad);
  CHECK_THROWS_AS(read_tensor(s4), IoError);
  CHECK_THROWS_AS(load_tensor(scratch_dir() / "missing.rtft"), IoError);
  CHECK_THROWS_AS(Tensor::from_f64({2, 2}, std::vector<double>{1.0}), InvalidArgument);
}

TEST_CASE("dense map tensor round trip") {
  Rng rng(4);
  for (Precision p : {Precision::kDouble, Precision::kSingle}) {
    const DenseMap r = random_map(rng, 7, 5, 3, MapKind::kPointmap, -4.0, 4.0);
    const DenseMap m(7, 5, 3, MapKind::kPointmap, {r.values().begin(), r.values().end()}, p);
    const fs::path path = scratch_dir() / "map.rtft";
    save_map(path, m);
    const DenseMap back = load_map(path, MapKind::kPointmap);
    CHECK(bitwise_equal(back, m));
  }
}

TEST_CASE("selection tensor round trip") {
  PixelSelection core = select_entropy(
      DenseMap(4, 5, 1, MapKind::kEntropy,
               {0.1, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.8,
                0.1, 0.1, 0.1, 0.1, 0.1}),
      0.3);
  const PixelSelection sel = dilate_halo(core, 1);
  const Tensor t = tensor_from_selection(sel);
  CHECK(t.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(sel.size()), 3});
  const PixelSelection back = selection_from_tensor(t, 4, 5);
  CHECK(back.coords == sel.coords);
  CHECK(back.is_core == sel.is_core);
  CHECK_THROWS_AS(selection_from_tensor(t, 2, 2), InvalidInput);
}

TEST_CASE("weight manifest round trip") {
  const std::vector<NamedTensor> ts{
      {"a.weight", Tensor::from_f64({2, 2}, std::vector<double>{1, 2, 3, 4})},
      {"b", Tensor::from_i32({1}, std::vector<std::int32_t>{-9})},
      {"c.bias", Tensor::from_f32({3}, std::vector<double>{0.5, 0.25, 0.125})}};
  std::stringstream io;
  write_manifest(io, ts);
  const std::string text = io.str();
  CHECK(text.rfind("retrofit-weights 1\ncount 3\na.weight f64 2x2 0\nb i32 1 48\n", 0) == 0);
  const auto back = read_manifest(io);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == ts[i].name);
    CHECK(bytes_of(back[i].tensor) == bytes_of(ts[i].tensor));
  }
  std::string broken = text;
  broken.replace(broken.find(" 48\n"), 4, " 40\n");
  std::istringstream bad(broken);
  CHECK_THROWS_AS(read_manifest(bad), IoError);
  CHECK_THROWS_AS(write_manifest(io, {{"two words", ts[0].tensor}}), InvalidArgument);
}

TEST_CASE("model save and load is bit-exact") {
  const Model m = perturbed_model(11, 3);
  const fs::path path = scratch_dir() / "model.weights";
  save_model(path, m);
  const Model back = load_model(path);
  CHECK(back.refiner_cfg.channels == m.refiner_cfg.channels);
  CHECK(back.refiner_cfg.geo_channels == 3);
  CHECK(back.fusion.hidden == m.fusion.hidden);
  const auto a = m.refiner.parameters();
  const auto b = back.refiner.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size_bytes()) == 0);
  }
  const auto fa = m.fusion.parameters();
  const auto fb = back.fusion.parameters();
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CHECK(std::memcmp(fa[i].data.data(), fb[i].data.data(), fa[i].data.size_bytes()) == 0);
  }
  std::stringstream s1, s2;
  write_model(s1, m);
  write_model(s2, back);
  CHECK(s1.str() == s2.str());
}

TEST_CASE("synth_scene is deterministic and well formed") {
  SceneConfig cfg;
  cfg.height = 64;
  cfg.width = 80;
  const SceneSample a = synth_scene(9, cfg);
  const SceneSample b = synth_scene(9, cfg);
  CHECK(bitwise_equal(a.rgb, b.rgb));
  CHECK(bitwise_equal(a.gt_geo, b.gt_geo));
  CHECK_FALSE(bitwise_equal(a.gt_geo, synth_scene(10, cfg).gt_geo));
  for (double d : a.gt_geo.values()) CHECK(d > 0.0);
  for (double v : a.rgb.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  cfg.kind = GeometryKind::kPointmap;
  const SceneSample p = synth_scene(9, cfg);
  CHECK(bitwise_equal(depth_channel(p.gt_geo), a.gt_geo));
  cfg.height = 16;
  CHECK_THROWS_AS(synth_scene(1, cfg), InvalidArgument);
}

TEST_CASE("one flat rectangle gives exactly two depth modes") {
  SceneConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.n_objects = 1;
  cfg.flat = true;
  cfg.rectangles_only = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SceneSample s = synth_scene(seed, cfg);
    const std::set<double> levels(s.gt_geo.values().begin(), s.gt_geo.values().end());
    CHECK(levels.size() == 2);
  }
}

TEST_CASE("boundary fraction over a seed sweep") {
  // Direct neighbour-difference scan.
  const auto oracle = [](const DenseMap& d) {
    double lo = 1e300, hi = -1e300;
    for (double v : d.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double t = 0.05 * (hi - lo);
    std::size_t n = 0;
    for (int r = 0; r < d.height(); ++r) {
      for (int c = 0; c < d.width(); ++c) {
        bool hit = false;
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int rr = r + dr[k], cc = c + dc[k];
          if (rr < 0 || cc < 0 || rr >= d.height() || cc >= d.width()) continue;
          hit = hit || std::abs(d.at(rr, cc) - d.at(r, c)) > t;
        }
        n += hit;
      }
    }
    return static_cast<double>(n) / static_cast<double>(d.pixel_count());
  };
  SceneConfig cfg;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const SceneSample s = synth_scene(seed, cfg);
    const double f = oracle(s.gt_geo);
    CHECK(boundary_fraction(s.gt_geo) == f);
    CHECK(f >= 0.005);
    CHECK(f <= 0.15);
  }
}

namespace {

// Two-depth scene: left of `split` at 1.0, right at 3.0.
SceneSample split_scene(int h, int w, int split) {
  std::vector<double> d(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) d[static_cast<std::size_t>(r) * w + c] = c < split ? 1.0 : 3.0;
  }
  return {DenseMap(h, w, 3, MapKind::kRgb), DenseMap(h, w, 1, MapKind::kDepth, std::move(d)),
          ValidityMask::all_valid(h, w), 0};
}

}  // namespace

TEST_CASE("synthetic backbone entropy on constant and split cells") {
  const SceneSample s = split_scene(64, 64, 28);
  BackboneConfig bc;
  bc.long_side = 8;
  bc.noise_sigma = 0.0;
  const BackboneOutput out = synthetic_backbone(s, bc);
  validate_backbone(out);
  const DenseMap h = compute_entropy(out.logits_lr);

  // Constant cell: the anchored smoothing box fills one bin, the other three
  // sit at the 1e-6 floor.
  const double floor = 1e-6;
  const double z = 1.0 + 3.0 * floor;
  const double q1 = 1.0 / z, q0 = floor / z;
  const double expected = -(q1 * std::log(q1) + 3.0 * q0 * std::log(q0)) / std::log(4.0);
  CHECK(expected < 0.35);
  double max_constant = 0.0;
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      if (c == 3) continue;
      CHECK(h.at(r, c) == doctest::Approx(expected).epsilon(1e-12));
      max_constant = std::max(max_constant, h.at(r, c));
    }
  }
  // Column 3 covers pixels 24..31, half at each depth.
  for (int r = 0; r < 8; ++r) CHECK(h.at(r, 3) > max_constant);
}

TEST_CASE("synthetic backbone without noise at full size is the identity") {
  SceneConfig cfg;
  cfg.height = 48;
  cfg.width = 40;
  const SceneSample s = synth_scene(5, cfg);
  BackboneConfig bc;
  bc.long_side = 48;
  bc.noise_sigma = 0.0;
  const BackboneOutput out = synthetic_backbone(s, bc);
  CHECK(bitwise_equal(out.coarse_lr, s.gt_geo));
  CHECK(out.long_side_used == 48);
  bc.k_bins = 1;
  CHECK_THROWS_AS(synthetic_backbone(s, bc), InvalidArgument);
}

TEST_CASE("alpha 1 and a zero head reproduce the coarse map") {
  const Fixture f = small_fixture(21);
  const DenseMap coarse = upsample_nearest(f.backbone.coarse_lr, 96, 128);
  PipelineConfig cfg;
  cfg.alpha = 1.0;
  const PipelineResult empty = run_pipeline(f.scene.rgb, f.backbone, perturbed_model(1), cfg);
  CHECK(empty.selection.empty());
  CHECK(empty.diag.madds == 0);
  CHECK(bitwise_equal(empty.output, coarse));

  RefinerConfig rc;
  rc.channels = {4, 8};
  const Model zero_head = Model::initialize(rc, 2);
  for (FusionStrategy s : {FusionStrategy::kGated, FusionStrategy::kDirect,
                           FusionStrategy::kEntropy, FusionStrategy::kCoarseKeep}) {
    cfg.alpha = 0.1;
    cfg.strategy = s;
    const PipelineResult r = run_pipeline(f.scene.rgb, f.backbone, zero_head, cfg);
    CHECK(r.diag.core_count > 0);
    CHECK(bitwise_equal(r.output, coarse));
  }
}

TEST_CASE("pipeline changes only core pixels and is deterministic") {
  const Fixture f = small_fixture(22);
  const Model m = perturbed_model(3);
  PipelineConfig cfg;
  cfg.alpha = 0.3;
  cfg.halo = 2;
  const PipelineResult a = run_pipeline(f.scene.rgb, f.backbone, m, cfg);
  const PipelineResult b = run_pipeline(f.scene.rgb, f.backbone, m, cfg);
  CHECK(bitwise_equal(a.output, b.output));
  CHECK(a.diag.madds == b.diag.madds);
  CHECK(a.diag.kernel_pairs == b.diag.kernel_pairs);
  REQUIRE(a.diag.core_count > 0);
  CHECK(a.diag.halo_count > 0);
  CHECK(a.gate_weights.size() == a.diag.core_count);

  std::set<Coord> core;
  for (std::size_t i = 0; i < a.selection.size(); ++i) {
    if (a.selection.is_core[i]) core.insert(a.selection.coords[i]);
  }
  std::size_t changed = 0;
  for (int r = 0; r < 96; ++r) {
    for (int c = 0; c < 128; ++c) {
      if (a.output.at(r, c) != a.inputs.coarse_hr.at(r, c)) {
        ++changed;
        CHECK(core.count({r, c}) == 1);
      }
    }
  }
  CHECK(changed > 0);
  const double n = 96.0 * 128.0;
  CHECK(a.diag.selected_fraction == doctest::Approx(a.diag.core_count / n));
}

TEST_CASE("dense baseline equals alpha 0 with no halo") {
  const Fixture f = small_fixture(23);
  const Model m = perturbed_model(4);
  PipelineConfig cfg;
  cfg.alpha = 0.0;
  cfg.halo = 0;
  const PipelineResult sparse = run_pipeline(f.scene.rgb, f.backbone, m, cfg);
  const PipelineResult dense = run_dense_baseline(f.scene.rgb, f.backbone, m);
  REQUIRE(sparse.diag.core_count == 96u * 128u);
  CHECK(bitwise_equal(sparse.output, dense.output));
  CHECK(sparse.diag.madds == dense.diag.madds);

  cfg.alpha = 0.3;
  cfg.halo = 1;
  const PipelineResult s = run_pipeline(f.scene.rgb, f.backbone, m, cfg);
  CHECK(s.diag.madds < dense.diag.madds);
}

TEST_CASE("selectors honour their budget") {
  const Fixture f = small_fixture(24);
  const Model m = perturbed_model(5);
  for (SelectorKind k : {SelectorKind::kTopK, SelectorKind::kRandom, SelectorKind::kEdge}) {
    PipelineConfig cfg;
    cfg.selector = k;
    cfg.budget = 0.1;
    cfg.halo = 0;
    const PipelineResult r = run_pipeline(f.scene.rgb, f.backbone, m, cfg);
    CHECK(r.diag.core_count == static_cast<std::size_t>(std::lround(0.1 * 96 * 128)));
    CHECK(parse_selector(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_selector("bilateral"), InvalidArgument);
}

TEST_CASE("pointmap pipeline") {
  const Fixture f = small_fixture(25, GeometryKind::kPointmap);
  const Model m = perturbed_model(6, 3);
  const PipelineResult r = run_pipeline(f.scene.rgb, f.backbone, m, {});
  CHECK(r.output.channels() == 3);
  CHECK(r.output.kind() == MapKind::kPointmap);
  CHECK_THROWS_AS(run_pipeline(f.scene.rgb, f.backbone, perturbed_model(6, 1), {}),
                  InvalidArgument);
}

TEST_CASE("selected depth metrics restrict to core pixels") {
  const DenseMap gt(1, 3, 1, MapKind::kDepth, {1.0, 1.0, 4.4});
  const DenseMap pred(1, 3, 1, MapKind::kDepth, {1.0, 2.0, 4.0});
  PixelSelection sel;
  sel.height = 1;
  sel.width = 3;
  sel.coords = {{0, 0}, {0, 1}, {0, 2}};
  sel.is_core = {0, 1, 0};
  const MetricReport m = selected_depth_metrics(pred, gt, ValidityMask::all_valid(1, 3), sel);
  CHECK(m.valid_count == 1);
  CHECK(*m.abs_rel == 1.0);
  CHECK(*m.rmse == 1.0);
  sel.is_core = {0, 0, 0};
  CHECK_THROWS_AS(selected_depth_metrics(pred, gt, ValidityMask::all_valid(1, 3), sel),
                  EmptyEvaluation);
}

TEST_CASE("depth PNG export") {
  const DenseMap flat(5, 6, 1, MapKind::kDepth, std::vector<double>(30, 2.5));
  const fs::path path = scratch_dir() / "flat.png";
  const auto range = write_depth_png(path, flat, ValidityMask::all_valid(5, 6));
  CHECK(range.first == 2.5);
  CHECK(range.second == 2.5);
  int h = 0, w = 0;
  const auto px = read_png16(path, &h, &w);
  CHECK(h == 5);
  CHECK(w == 6);
  CHECK(std::set<std::uint16_t>(px.begin(), px.end()).size() == 1);

  const DenseMap ramp(1, 3, 1, MapKind::kDepth, {1.0, 2.0, 3.0});
  write_depth_png(scratch_dir() / "ramp.png", ramp, ValidityMask::all_valid(1, 3));
  const auto lv = read_png16(scratch_dir() / "ramp.png", &h, &w);
  CHECK(lv == std::vector<std::uint16_t>{0, 32768, 65535});
  std::ifstream side(scratch_dir() / "ramp.png.range.txt");
  std::string l1, l2;
  std::getline(side, l1);
  std::getline(side, l2);
  CHECK(l1 == "min=1");
  CHECK(l2 == "max=3");
  CHECK_THROWS_AS(write_depth_png("/nonexistent/dir/x.png", ramp, ValidityMask::all_valid(1, 3)),
                  IoError);
}

TEST_CASE("PLY export enumerates valid pixels") {
  const DenseMap pts(2, 2, 3, MapKind::kPointmap,
                     {0.1, 0.2, 1.0, 0.3, 0.4, 2.0, 0.5, 0.6, 3.0, 0.7, 0.8, 4.0});
  ValidityMask mask = ValidityMask::all_valid(2, 2);
  mask.set(0, 1, false);
  const fs::path path = scratch_dir() / "pts.ply";
  CHECK(write_pointmap_ply(path, pts, mask) == 3);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 7 + 3);
  CHECK(lines[2] == "element vertex 3");
  CHECK(lines[6] == "end_header");
  const std::array<std::array<double, 3>, 3> expect{{{0.1, 0.2, 1.0}, {0.5, 0.6, 3.0},
                                                     {0.7, 0.8, 4.0}}};
  for (int i = 0; i < 3; ++i) {
    std::istringstream ls(lines[7 + i]);
    double x, y, z;
    ls >> x >> y >> z;
    CHECK(x == expect[i][0]);
    CHECK(y == expect[i][1]);
    CHECK(z == expect[i][2]);
  }
}

TEST_CASE("export_outputs writes the expected files") {
  const fs::path dir = scratch_dir() / "out";
  const DenseMap d(3, 3, 1, MapKind::kDepth, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  export_outputs(dir, "depth", d, ValidityMask::all_valid(3, 3));
  CHECK(fs::exists(dir / "depth.png"));
  CHECK(fs::exists(dir / "depth.png.range.txt"));
  CHECK(bitwise_equal(load_map(dir / "depth.rtft", MapKind::kDepth), d));
}

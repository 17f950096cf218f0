#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "depthfit/image_io.hpp"
#include "depthfit/losses.hpp"
#include "depthfit/synth.hpp"

using namespace depthfit;

namespace {

// Mean absolute error between warped source and target over a pixel mask,
// excluding a border strip.
double masked_warp_error(const Triplet& t, const Tensor& warped, const Tensor& valid, int border) {
  const int h = t.intrinsics.height, w = t.intrinsics.width;
  double acc = 0.0;
  long long n = 0;
  for (int y = border; y < h - border; ++y)
    for (int x = border; x < w - border; ++x) {
      if (valid.data()[static_cast<size_t>(y * w + x)] == 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        double a = warped.data()[static_cast<size_t>(c * h * w + y * w + x)];
        double b = t.target.data()[static_cast<size_t>(c * h * w + y * w + x)];
        acc += std::fabs(a - b);
        ++n;
      }
    }
  REQUIRE(n > 0);
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_CASE("fronto-parallel plane renders constant depth") {
  SceneSpec spec;
  spec.layout = SceneLayout::FrontoPlane;
  spec.plane_depth = 5.0;
  spec.intrinsics = default_intrinsics(32, 32);
  auto [img, dep] = gen_scene(spec);
  CHECK(img.shape == Shape{1, 3, 32, 32});
  for (double v : dep.data()) CHECK(v == Catch::Approx(5.0).margin(1e-12));
  for (double v : img.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("slanted plane depth matches the closed-form ray-plane intersection") {
  SceneSpec spec;
  spec.layout = SceneLayout::SlantedPlane;
  spec.slant_depth = 5.0;
  double alpha = 0.3;
  spec.slant_normal = {std::sin(alpha), 0.0, std::cos(alpha)};
  spec.intrinsics = default_intrinsics(32, 32);
  auto [img, dep] = gen_scene(spec);
  (void)img;
  const Intrinsics& K = spec.intrinsics;
  // hand formula: depth(u) = 5 cos(a) / (sin(a) (u - cx)/fx + cos(a))
  for (int y : {0, 16, 31})
    for (int x : {0, 8, 16, 24, 31}) {
      double want = 5.0 * std::cos(alpha) / (std::sin(alpha) * (x - K.cx) / K.fx + std::cos(alpha));
      CHECK(dep.data()[static_cast<size_t>(y * 32 + x)] == Catch::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("two-plane layout puts the foreground in front of the background") {
  SceneSpec spec;
  spec.layout = SceneLayout::TwoPlaneOcclusion;
  spec.plane_depth = 6.0;
  spec.fg_depth = 3.0;
  spec.fg_cx = 0.0;
  spec.fg_cy = 0.0;
  spec.fg_w = 2.0;
  spec.fg_h = 2.0;
  spec.intrinsics = default_intrinsics(64, 64);
  auto [img, dep] = gen_scene(spec);
  (void)img;
  // center pixel hits the foreground, corner pixels the background
  CHECK(dep.data()[static_cast<size_t>(32 * 64 + 32)] == Catch::Approx(3.0).margin(1e-9));
  CHECK(dep.data()[0] == Catch::Approx(6.0).margin(1e-9));
  // depths only take the two plane values (fronto-parallel both)
  for (double v : dep.data()) CHECK((std::fabs(v - 3.0) < 1e-9 || std::fabs(v - 6.0) < 1e-9));

  spec.fg_depth = 7.0;  // behind the background: invalid
  CHECK_THROWS(AnalyticScene(spec));
}

TEST_CASE("texture gradient energy exceeds the flatness threshold") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    SceneSpec spec;
    spec.layout = SceneLayout::FrontoPlane;
    spec.texture_seed = seed;
    spec.intrinsics = default_intrinsics(64, 64);
    auto [img, dep] = gen_scene(spec);
    (void)dep;
    double energy = 0.0;
    long long n = 0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x + 1 < 64; ++x) {
          double a = img.data()[static_cast<size_t>(c * 4096 + y * 64 + x)];
          double b = img.data()[static_cast<size_t>(c * 4096 + y * 64 + x + 1)];
          energy += std::fabs(b - a);
          ++n;
        }
    energy /= static_cast<double>(n);
    INFO("seed " << seed << " energy " << energy);
    CHECK(energy > 0.003);
  }
}

TEST_CASE("identity poses give three identical frames") {
  SceneSpec spec;
  spec.layout = SceneLayout::SlantedPlane;
  spec.slant_normal = {0.2, 0.1, 0.97};
  spec.intrinsics = default_intrinsics(32, 32);
  AnalyticScene scene(spec);
  Triplet t = render_triplet(scene, Pose::identity(), Pose::identity());
  CHECK(t.source1.data() == t.target.data());
  CHECK(t.source2.data() == t.target.data());
  for (double v : t.valid1.data()) CHECK(v == 1.0);
}

TEST_CASE("lateral motion shifts the source by the disparity law") {
  // plane at depth 5, fx = 64, tx = 0.5 -> source content shifts 6.4 px
  SceneSpec spec;
  spec.layout = SceneLayout::FrontoPlane;
  spec.plane_depth = 5.0;
  spec.texture_seed = 9;
  spec.intrinsics = default_intrinsics(64, 64);
  AnalyticScene scene(spec);
  Pose p1{{0, 0, 0}, {0.5, 0, 0}};
  Pose p2{{0, 0, 0}, {-0.5, 0, 0}};
  Triplet t = render_triplet(scene, p1, p2);
  double shift = 64.0 * 0.5 / 5.0;
  CHECK(shift == Catch::Approx(6.4));
  // disparity law: target pixel x projects to x + fx*tx/d in the source
  for (int y : {8, 32, 55})
    for (int x : {10, 33, 50}) {
      AnalyticScene::Hit hit = scene.trace(Pose::identity(), spec.intrinsics, x, y);
      Mat3 R = p1.matrix();
      Vec3 in_s1 = R.apply(hit.point) + p1.translation;
      double u = spec.intrinsics.fx * in_s1.x / in_s1.z + spec.intrinsics.cx;
      CHECK(u == Catch::Approx(x + shift).margin(1e-9));
      // and the source image content at that coordinate is the target's
      AnalyticScene::Hit src_hit = scene.trace(p1, spec.intrinsics, u, y);
      for (int c = 0; c < 3; ++c)
        CHECK(scene.texture_value(src_hit.plane, c, src_hit.point) ==
              Catch::Approx(t.target.data()[static_cast<size_t>(c * 4096 + y * 64 + x)]).margin(1e-9));
    }
}

TEST_CASE("ground-truth warp self-consistency on all layouts") {
  // the synthetic-scene oracle: warping the rendered source with ground-truth
  // depth and pose reproduces the target to < 1e-3 mean abs error away from
  // borders and disocclusions
  int index = 0;
  for (SceneLayout layout :
       {SceneLayout::FrontoPlane, SceneLayout::SlantedPlane, SceneLayout::TwoPlaneOcclusion}) {
    // retry sampling like the dataset builder does: some draws move too far
    Triplet t;
    bool ok = false;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
      Rng rng(mix_seed(601, static_cast<std::uint64_t>(index * 100 + attempt)));
      SceneSpec spec = sample_scene_spec(rng, 64, 64);
      spec.layout = layout;
      AnalyticScene scene(spec);
      auto [p1, p2] = sample_motion(rng);
      try {
        t = render_triplet(scene, p1, p2);
        ok = true;
      } catch (const std::runtime_error&) {
      }
    }
    ++index;
    REQUIRE(ok);

    Tensor w1 = warp(t.source1, t.gt_depth, t.pose1, t.intrinsics);
    Tensor w2 = warp(t.source2, t.gt_depth, t.pose2, t.intrinsics);
    double e1 = masked_warp_error(t, w1, t.valid1, 4);
    double e2 = masked_warp_error(t, w2, t.valid2, 4);
    INFO(layout_name(layout) << ": e1 " << e1 << " e2 " << e2);
    CHECK(e1 < 1e-3);
    CHECK(e2 < 1e-3);
  }
}

TEST_CASE("moving camera over textured scene: automask keeps most pixels") {
  Rng rng(607);
  SceneSpec spec = sample_scene_spec(rng, 64, 64);
  spec.layout = SceneLayout::SlantedPlane;
  AnalyticScene scene(spec);
  auto [p1, p2] = sample_motion(rng);
  Triplet t = render_triplet(scene, p1, p2);

  Tensor w1 = warp(t.source1, t.gt_depth, t.pose1, t.intrinsics);
  Tensor w2 = warp(t.source2, t.gt_depth, t.pose2, t.intrinsics);
  MaskMap mask = automask({pe(t.target, w1), pe(t.target, w2)}, {pe(t.target, t.source1), pe(t.target, t.source2)});
  double mean = 0.0;
  for (double v : mask.data()) mean += v;
  mean /= mask.size();
  INFO("mean lambda " << mean);
  CHECK(mean > 0.9);
}

TEST_CASE("determinism: same spec and seed reproduce bit-identical triplets") {
  SceneSpec spec;
  Triplet a = make_triplet(42, 7, 64, 64, &spec);
  Triplet b = make_triplet(42, 7, 64, 64);
  CHECK(a.target.data() == b.target.data());
  CHECK(a.source1.data() == b.source1.data());
  CHECK(a.gt_depth.data() == b.gt_depth.data());
  CHECK(a.pose1.flat() == b.pose1.flat());
  Triplet c = make_triplet(43, 7, 64, 64);
  CHECK(a.target.data() != c.target.data());
}

TEST_CASE("ppm round trip is exact after 8-bit quantization") {
  Rng rng(613);
  Tensor img = Tensor::zeros({1, 3, 6, 5});
  for (double& v : img.data()) v = rng.uniform();
  write_ppm("test_io.ppm", img);
  Tensor back = read_ppm("test_io.ppm");
  // quantize the original the same way and compare exactly
  for (int i = 0; i < img.size(); ++i) {
    double q = std::lround(std::min(std::max(img[i], 0.0), 1.0) * 255.0) / 255.0;
    CHECK(back[i] == Catch::Approx(q).margin(1e-15));
  }
  // second write/read is bit-stable
  write_ppm("test_io2.ppm", back);
  Tensor back2 = read_ppm("test_io2.ppm");
  CHECK(back2.data() == back.data());
  std::remove("test_io.ppm");
  std::remove("test_io2.ppm");
}

TEST_CASE("hand-built 2x2 ppm decodes to expected values") {
  {
    std::ofstream f("test_hand.ppm", std::ios::binary);
    f << "P6\n# comment\n2 2\n255\n";
    unsigned char bytes[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 0};
    f.write(reinterpret_cast<char*>(bytes), 12);
  }
  Tensor img = read_ppm("test_hand.ppm");
  CHECK(img.shape == Shape{1, 3, 2, 2});
  CHECK(img.data()[0] == 1.0);               // r at (0,0)
  CHECK(img.data()[5] == 1.0);               // g at (0,1)
  CHECK(img.data()[11] == 0.0);              // b at (1,1)
  CHECK(img.data()[3] == 1.0);               // r at (1,1)
  std::remove("test_hand.ppm");
}

TEST_CASE("ppm error paths") {
  {
    std::ofstream f("test_bad.ppm", std::ios::binary);
    f << "P6\n2 2\n65535\n";
    for (int i = 0; i < 24; ++i) f.put(static_cast<char>(0));
  }
  CHECK_THROWS(read_ppm("test_bad.ppm"));  // unsupported maxval
  {
    std::ofstream f("test_bad.ppm", std::ios::binary);
    f << "P6\n2 2\n255\n";
    f.put(static_cast<char>(7));  // truncated payload
  }
  CHECK_THROWS(read_ppm("test_bad.ppm"));
  {
    std::ofstream f("test_bad.ppm", std::ios::binary);
    f << "P5\n2 2\n255\n";
  }
  CHECK_THROWS(read_ppm("test_bad.ppm"));
  std::remove("test_bad.ppm");
  CHECK_THROWS(read_ppm("test_missing_file.ppm"));
}

TEST_CASE("pfm round trip is bit-exact") {
  Rng rng(617);
  Tensor dep = Tensor::zeros({1, 1, 5, 7});
  // values representable in f32 round-trip bit-exactly
  for (double& v : dep.data()) v = static_cast<double>(static_cast<float>(rng.uniform(0.1, 50.0)));
  write_pfm("test_io.pfm", dep);
  Tensor back = read_pfm("test_io.pfm");
  CHECK(back.data() == dep.data());
  std::remove("test_io.pfm");
}

TEST_CASE("pfm scale sign encodes endianness") {
  {
    std::ofstream f("test_sc.pfm", std::ios::binary);
    f << "Pf\n1 1\n-1.0\n";
    float v = 2.5f;
    f.write(reinterpret_cast<char*>(&v), 4);
  }
  Tensor t = read_pfm("test_sc.pfm");
  CHECK(t[0] == 2.5);
  {
    std::ofstream f("test_sc.pfm", std::ios::binary);
    f << "Pf\n1 1\n1.0\n";  // big-endian marker: rejected
    float v = 2.5f;
    f.write(reinterpret_cast<char*>(&v), 4);
  }
  CHECK_THROWS(read_pfm("test_sc.pfm"));
  std::remove("test_sc.pfm");
}

TEST_CASE("pfm rows are stored bottom-up") {
  Tensor dep = Tensor::from({1, 1, 2, 1}, {1.0, 2.0});  // row 0 = 1, row 1 = 2
  write_pfm("test_rows.pfm", dep);
  std::ifstream f("test_rows.pfm", std::ios::binary);
  std::string line;
  std::getline(f, line);
  std::getline(f, line);
  std::getline(f, line);
  float first;
  f.read(reinterpret_cast<char*>(&first), 4);
  CHECK(first == 2.0f);  // bottom row first
  Tensor back = read_pfm("test_rows.pfm");
  CHECK(back.data() == dep.data());
  std::remove("test_rows.pfm");
}

TEST_CASE("false color") {
  SECTION("constant input maps to a single color") {
    Tensor d = Tensor::full({1, 1, 3, 3}, 2.0);
    Tensor img = false_color(d);
    for (int c = 0; c < 3; ++c)
      for (int i = 1; i < 9; ++i)
        CHECK(img.data()[static_cast<size_t>(c * 9 + i)] == img.data()[static_cast<size_t>(c * 9)]);
  }
  SECTION("min maps to the first table entry, max to the last") {
    Tensor d = Tensor::from({1, 1, 1, 3}, {1.0, 5.0, 10.0});
    Tensor img = false_color(d);
    for (int c = 0; c < 3; ++c) {
      CHECK(img.data()[static_cast<size_t>(c * 3 + 0)] == kColormap[0][static_cast<size_t>(c)] / 255.0);
      CHECK(img.data()[static_cast<size_t>(c * 3 + 2)] == kColormap[255][static_cast<size_t>(c)] / 255.0);
    }
  }
  SECTION("monotone ramp maps to monotone table indices") {
    Tensor d = Tensor::zeros({1, 1, 1, 16});
    for (int i = 0; i < 16; ++i) d.data()[static_cast<size_t>(i)] = 1.0 + i;
    Tensor img = false_color(d);
    // green channel of viridis is monotone increasing
    for (int i = 1; i < 16; ++i)
      CHECK(img.data()[static_cast<size_t>(16 + i)] >= img.data()[static_cast<size_t>(16 + i - 1)]);
  }
  SECTION("nonpositive values are rejected") {
    CHECK_THROWS(false_color(Tensor::from({1, 1, 1, 2}, {0.0, 1.0})));
  }
}

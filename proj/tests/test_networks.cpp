#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "depthfit/geometry.hpp"
#include "depthfit/gradcheck.hpp"
#include "depthfit/networks.hpp"

using namespace depthfit;

namespace {

Tensor random_image(int n, int h, int w, Rng& rng) { return random_tensor({n, 3, h, w}, rng, 0.0, 1.0); }

}  // namespace

TEST_CASE("network config validation") {
  NetworkConfig c;
  c.validate();
  NetworkConfig bad = c;
  bad.encoder_channels = {16, 16, 64, 128};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.scales = 5;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.d_min = 2.0;
  bad.d_max = 1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("encoder stage sizes and purity") {
  DepthPoseModel model(NetworkConfig{}, 7);
  Rng rng(401);
  Tensor img = random_image(1, 64, 64, rng);

  Tape tape;
  auto net = model.bind(tape);
  auto pyr = net.encode(img);
  REQUIRE(pyr.size() == 4);
  CHECK(pyr[0].shape == Shape{1, 16, 32, 32});
  CHECK(pyr[1].shape == Shape{1, 32, 16, 16});
  CHECK(pyr[2].shape == Shape{1, 64, 8, 8});
  CHECK(pyr[3].shape == Shape{1, 128, 4, 4});

  auto pyr2 = net.encode(img);
  for (int k = 0; k < 4; ++k) CHECK(pyr[static_cast<size_t>(k)].data() == pyr2[static_cast<size_t>(k)].data());

  CHECK_THROWS(net.encode(random_image(1, 60, 64, rng)));
}

TEST_CASE("gradient reaches the first encoder stage from the deepest output") {
  DepthPoseModel model(NetworkConfig{}, 7);
  Rng rng(403);
  Tensor img = random_image(1, 32, 32, rng);
  Tape tape;
  auto net = model.bind(tape);
  auto pyr = net.encode(img);
  model.params().zero_grads();
  tape.backward(reduce_mean(mul(pyr[3], pyr[3])));
  double norm = 0.0;
  for (double g : model.params().get("encoder.0.w").grad) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("decoder emits 4 sigmoid disparities at the contracted resolutions") {
  DepthPoseModel model(NetworkConfig{}, 7);
  Rng rng(405);
  Tensor img = random_image(2, 64, 64, rng);
  Tape tape;
  auto net = model.bind(tape);
  auto disps = net.depth_forward(img);
  REQUIRE(disps.size() == 4);
  CHECK(disps[0].shape == Shape{2, 1, 64, 64});
  CHECK(disps[1].shape == Shape{2, 1, 32, 32});
  CHECK(disps[2].shape == Shape{2, 1, 16, 16});
  CHECK(disps[3].shape == Shape{2, 1, 8, 8});
  for (const Tensor& d : disps)
    for (double v : d.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
}

TEST_CASE("disabling attention changes only the deepest-stage input width") {
  NetworkConfig with;
  NetworkConfig without;
  without.attention_enabled = false;
  DepthPoseModel a(with, 7), b(without, 7);
  CHECK(a.params().get("decoder.3.w1").shape == Shape{64, 256, 3, 3});
  CHECK(b.params().get("decoder.3.w1").shape == Shape{64, 128, 3, 3});
  // every other decoder parameter keeps its shape
  for (int i = 2; i >= 0; --i) {
    std::string base = "decoder." + std::to_string(i);
    CHECK(a.params().get(base + ".w1").shape == b.params().get(base + ".w1").shape);
    CHECK(a.params().get(base + ".w2").shape == b.params().get(base + ".w2").shape);
  }
  CHECK_FALSE(b.params().has("attention.w_f"));

  Rng rng(407);
  Tensor img = random_image(1, 32, 32, rng);
  Tape tape;
  auto net = b.bind(tape);
  auto disps = net.depth_forward(img);
  CHECK(disps[0].shape == Shape{1, 1, 32, 32});
}

TEST_CASE("pose head") {
  DepthPoseModel model(NetworkConfig{}, 7);
  Rng rng(409);
  Tensor img_t = random_image(1, 32, 32, rng);
  Tensor img_s = random_image(1, 32, 32, rng);

  SECTION("zeroed head weights give the identity pose") {
    auto& hw = model.params().get("pose.head.w");
    auto& hb = model.params().get("pose.head.b");
    std::fill(hw.value.begin(), hw.value.end(), 0.0);
    std::fill(hb.value.begin(), hb.value.end(), 0.0);
    Tape tape;
    auto net = model.bind(tape);
    auto pyr_t = net.encode(img_t);
    auto pyr_s = net.encode(img_s);
    Tensor p = net.pose(pyr_t.back(), pyr_s.back());
    CHECK(p.shape == Shape{1, 6});
    for (double v : p.data()) CHECK(v == 0.0);
  }

  SECTION("argument order matters") {
    Tape tape;
    auto net = model.bind(tape);
    auto pyr_t = net.encode(img_t);
    auto pyr_s = net.encode(img_s);
    Tensor p_ts = net.pose(pyr_t.back(), pyr_s.back());
    Tensor p_st = net.pose(pyr_s.back(), pyr_t.back());
    double diff = 0.0;
    for (int i = 0; i < 6; ++i) diff += std::fabs(p_ts[i] - p_st[i]);
    CHECK(diff > 1e-12);
  }
}

TEST_CASE("pose-head gradient through a warp loss matches finite differences") {
  NetworkConfig cfg;
  cfg.attention_enabled = false;
  DepthPoseModel model(cfg, 11);
  Rng rng(411);
  Intrinsics K = default_intrinsics(32, 32);
  Tensor img_t = random_image(1, 32, 32, rng);
  Tensor img_s = random_image(1, 32, 32, rng);
  // smooth source for stable interpolation derivatives
  Tensor smooth_src = Tensor::zeros({1, 3, 32, 32});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        smooth_src.data()[static_cast<size_t>((c * 32 + y) * 32 + x)] =
            0.5 + 0.3 * std::sin(0.2 * x + 0.3 * y + 2 * c);
  Tensor depth = Tensor::full({1, 1, 32, 32}, 5.0);

  Parameter& head = model.params().get("pose.head.w");

  auto eval_loss = [&]() {
    Tape tape;
    auto net = model.bind(tape);
    auto pyr_t = net.encode(img_t);
    auto pyr_s = net.encode(img_s);
    Tensor pose6 = net.pose(pyr_t.back(), pyr_s.back());
    Tensor w = warp(smooth_src, depth, pose6, K);
    Tensor diff = sub(w, img_t);
    return reduce_mean(mul(diff, diff));
  };

  model.params().zero_grads();
  {
    Tape tape;
    auto net = model.bind(tape);
    auto pyr_t = net.encode(img_t);
    auto pyr_s = net.encode(img_s);
    Tensor pose6 = net.pose(pyr_t.back(), pyr_s.back());
    Tensor w = warp(smooth_src, depth, pose6, K);
    Tensor diff = sub(w, img_t);
    tape.backward(reduce_mean(mul(diff, diff)));
  }
  std::vector<double> analytic = head.grad;

  double worst = 0.0;
  const double eps = 1e-6;
  for (size_t j = 0; j < head.value.size(); j += 7) {  // sample a subset of weights
    double keep = head.value[j];
    head.value[j] = keep + eps;
    double up = value_of(eval_loss());
    head.value[j] = keep - eps;
    double down = value_of(eval_loss());
    head.value[j] = keep;
    double numeric = (up - down) / (2 * eps);
    double rel = std::fabs(analytic[j] - numeric) / std::max({1.0, std::fabs(analytic[j]), std::fabs(numeric)});
    worst = std::max(worst, rel);
  }
  INFO("worst rel err " << worst);
  CHECK(worst < 1e-3);
}

TEST_CASE("forward_full returns one pose per source and is deterministic") {
  DepthPoseModel model(NetworkConfig{}, 13);
  Rng rng(413);
  Tensor t = random_image(1, 32, 32, rng), s1 = random_image(1, 32, 32, rng), s2 = random_image(1, 32, 32, rng);
  Tape tape;
  auto net = model.bind(tape);
  FullOutput a = net.forward_full(t, s1, s2);
  CHECK(a.pose1.shape == Shape{1, 6});
  CHECK(a.pose2.shape == Shape{1, 6});
  CHECK(a.disparities.size() == 4);

  DepthPoseModel model2(NetworkConfig{}, 13);
  Tape tape2;
  auto net2 = model2.bind(tape2);
  FullOutput b = net2.forward_full(t, s1, s2);
  CHECK(a.disparities[0].data() == b.disparities[0].data());
  CHECK(a.pose1.data() == b.pose1.data());
}

TEST_CASE("identical seeds build identical parameters; different seeds differ") {
  DepthPoseModel a(NetworkConfig{}, 21), b(NetworkConfig{}, 21), c(NetworkConfig{}, 22);
  bool all_equal = true, any_diff = false;
  for (size_t i = 0; i < a.params().count(); ++i) {
    if (a.params().at(i).value != b.params().at(i).value) all_equal = false;
    if (a.params().at(i).value != c.params().at(i).value) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("checkpoint round trip is bit-exact and reproduces outputs") {
  DepthPoseModel model(NetworkConfig{}, 17);
  Rng rng(417);
  Tensor img = random_image(1, 32, 32, rng);

  Tape tape;
  auto disps = model.bind(tape).depth_forward(img);
  std::vector<double> before = disps[0].data();

  std::string path = "test_ckpt_roundtrip.dfck";
  write_checkpoint(path, model.export_params());

  DepthPoseModel loaded(NetworkConfig{}, 999);  // different init, then overwritten
  loaded.import_params(read_checkpoint(path));
  for (size_t i = 0; i < model.params().count(); ++i)
    CHECK(model.params().at(i).value == loaded.params().at(i).value);

  Tape tape2;
  auto disps2 = loaded.bind(tape2).depth_forward(img);
  CHECK(disps2[0].data() == before);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint corruption and mismatch are detected") {
  DepthPoseModel model(NetworkConfig{}, 19);
  std::string path = "test_ckpt_corrupt.dfck";
  write_checkpoint(path, model.export_params());

  // flip one byte in the middle
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    char c;
    f.seekg(100);
    f.get(c);
    f.seekp(100);
    c = static_cast<char>(c ^ 0x40);
    f.put(c);
  }
  CHECK_THROWS(read_checkpoint(path));
  std::remove(path.c_str());

  // config mismatch: different channel widths
  write_checkpoint(path, model.export_params());
  NetworkConfig other;
  other.encoder_channels = {8, 16, 32, 64};
  DepthPoseModel small(other, 19);
  CHECK_THROWS(small.import_params(read_checkpoint(path)));
  std::remove(path.c_str());
}

TEST_CASE("dead-parameter check: every parameter gets gradient somewhere") {
  // Randomize all parameters (the shipped init zeroes attention.w_f, which
  // legitimately blocks theta/phi/g gradients until the first update).
  DepthPoseModel model(NetworkConfig{}, 23);
  Rng prng(419);
  for (size_t i = 0; i < model.params().count(); ++i)
    for (double& v : model.params().at(i).value) v = prng.uniform(-0.3, 0.3);

  Rng rng(421);
  Tensor t = random_image(2, 32, 32, rng), s1 = random_image(2, 32, 32, rng), s2 = random_image(2, 32, 32, rng);
  model.params().zero_grads();
  Tape tape;
  auto net = model.bind(tape);
  FullOutput out = net.forward_full(t, s1, s2);
  Tensor loss = reduce_mean(out.disparities[0]);
  for (int i = 1; i < 4; ++i) loss = add(loss, reduce_mean(out.disparities[static_cast<size_t>(i)]));
  loss = add(loss, reduce_mean(mul(out.pose1, out.pose1)));
  loss = add(loss, reduce_mean(mul(out.pose2, out.pose2)));
  tape.backward(loss);

  for (size_t i = 0; i < model.params().count(); ++i) {
    const Parameter& p = model.params().at(i);
    double norm = 0.0;
    for (double g : p.grad) norm += std::fabs(g);
    INFO(p.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("encoder is shared: pose and depth consume the same pyramid") {
  DepthPoseModel model(NetworkConfig{}, 29);
  Rng rng(423);
  Tensor t = random_image(1, 32, 32, rng), s = random_image(1, 32, 32, rng);
  Tape tape;
  auto net = model.bind(tape);
  auto pyr_t = net.encode(t);
  auto pyr_s = net.encode(s);
  // the same tensor object feeds both heads
  Tensor deepest = pyr_t.back();
  auto disps = net.decode(pyr_t, net.deepest_input(pyr_t));
  Tensor pose6 = net.pose(deepest, pyr_s.back());
  CHECK(disps[0].defined());
  CHECK(pose6.defined());
  // identity of values: encode() of the same input reuses identical leaves,
  // so re-encoding produces bitwise identical features
  auto pyr_t2 = net.encode(t);
  CHECK(pyr_t2.back().data() == deepest.data());
}

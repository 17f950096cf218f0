#include <catch2/catch_amalgamated.hpp>

#include "depthfit/gradcheck.hpp"
#include "depthfit/losses.hpp"

using namespace depthfit;

TEST_CASE("ssim of an image with itself is 1 everywhere") {
  Rng rng(201);
  Tensor a = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
  Tensor s = ssim(a, a);
  for (double v : s.data()) CHECK(v == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("ssim closed form on constant images") {
  Tensor a = Tensor::full({1, 1, 5, 5}, 0.2);
  Tensor b = Tensor::full({1, 1, 5, 5}, 0.8);
  // (2*0.16 + 1e-4) / (0.04 + 0.64 + 1e-4); variance terms cancel to C2/C2
  double want = (2 * 0.2 * 0.8 + 1e-4) / (0.2 * 0.2 + 0.8 * 0.8 + 1e-4);
  CHECK(want == Catch::Approx(0.4707).margin(5e-5));
  Tensor s = ssim(a, b);
  for (double v : s.data()) CHECK(v == Catch::Approx(want).margin(1e-9));
}

TEST_CASE("ssim range and gradient") {
  Rng rng(203);
  Tensor a = random_tensor({1, 2, 6, 6}, rng, 0.0, 1.0);
  Tensor b = random_tensor({1, 2, 6, 6}, rng, 0.0, 1.0);
  Tensor s = ssim(a, b);
  for (double v : s.data()) {
    CHECK(v >= -1.0 - 1e-9);
    CHECK(v <= 1.0 + 1e-9);
  }
  auto res = gradcheck(
      "ssim", [](Tape&, std::vector<Tensor>& in) { return reduce_mean(ssim(in[0], in[1])); }, {a, b}, 1e-4);
  INFO(res.max_rel_err);
  CHECK(res.passed);
}

TEST_CASE("pe basics") {
  Rng rng(207);
  Tensor x = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
  SECTION("pe(x,x) is zero") {
    Tensor p = pe(x, x);
    CHECK(p.shape == Shape{1, 1, 6, 6});
    for (double v : p.data()) CHECK(v == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("constant-image closed form") {
    Tensor a = Tensor::full({1, 1, 5, 5}, 0.2);
    Tensor b = Tensor::full({1, 1, 5, 5}, 0.8);
    double s = (2 * 0.2 * 0.8 + 1e-4) / (0.2 * 0.2 + 0.8 * 0.8 + 1e-4);
    double want = 0.425 * (1.0 - s) + 0.15 * 0.6;
    CHECK(want == Catch::Approx(0.3150).margin(5e-5));
    Tensor p = pe(a, b);
    for (double v : p.data()) CHECK(v == Catch::Approx(want).margin(1e-9));
  }
  SECTION("nonnegative on random inputs") {
    Tensor y = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    for (double v : pe(x, y).data()) CHECK(v >= 0.0);
  }
  SECTION("symmetric in its arguments") {
    Tensor y = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    Tensor pab = pe(x, y);
    Tensor pba = pe(y, x);
    for (int i = 0; i < pab.size(); ++i) CHECK(std::fabs(pab[i] - pba[i]) < 1e-12);
  }
  SECTION("mismatched shapes throw") { CHECK_THROWS(pe(x, Tensor::zeros({1, 3, 5, 6}))); }
}

TEST_CASE("min_reprojection") {
  Tensor a = Tensor::from({1, 1, 1, 2}, {2, 5});
  Tensor b = Tensor::from({1, 1, 1, 2}, {4, 1});
  Tensor m = min_reprojection({a, b});
  CHECK(m[0] == 2.0);
  CHECK(m[1] == 1.0);

  Tensor single = min_reprojection({a});
  CHECK(single.data() == a.data());

  CHECK_THROWS(min_reprojection({}));

  // output <= every input, elementwise (random property)
  Rng rng(211);
  std::vector<Tensor> maps;
  for (int k = 0; k < 3; ++k) maps.push_back(random_tensor({1, 1, 4, 4}, rng, 0.0, 1.0));
  Tensor mr = min_reprojection(maps);
  for (const Tensor& mp : maps)
    for (int i = 0; i < mr.size(); ++i) CHECK(mr[i] <= mp[i]);
}

TEST_CASE("automask") {
  SECTION("static triplet: ties give zero mask everywhere") {
    Tensor zero_pe = Tensor::zeros({1, 1, 4, 4});
    Tensor tiny_pe = Tensor::full({1, 1, 4, 4}, 1e-9);
    // warped error slightly positive, static error exactly zero -> mask 0
    MaskMap m = automask({tiny_pe}, {zero_pe});
    for (double v : m.data()) CHECK(v == 0.0);
    // both exactly zero (perfect tie) -> strict < fails -> 0
    MaskMap m2 = automask({zero_pe}, {zero_pe});
    for (double v : m2.data()) CHECK(v == 0.0);
  }
  SECTION("warped better than static gives 1") {
    Tensor w = Tensor::full({1, 1, 2, 2}, 0.1);
    Tensor s = Tensor::full({1, 1, 2, 2}, 0.3);
    MaskMap m = automask({w}, {s});
    for (double v : m.data()) CHECK(v == 1.0);
  }
  SECTION("mask is binary") {
    Rng rng(213);
    MaskMap m = automask({random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0)}, {random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0)});
    for (double v : m.data()) CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("mask_regularization") {
  SECTION("mask all ones: surrogate and metric are zero") {
    Tensor w = Tensor::full({1, 1, 3, 3}, 0.1);
    Tensor s = Tensor::full({1, 1, 3, 3}, 0.5);
    MaskMap m = automask({w}, {s});
    auto reg = mask_regularization(m, w, s);
    CHECK(value_of(reg.surrogate) == 0.0);
    CHECK(reg.literal == 0.0);
  }
  SECTION("mask all zeros with a constant 0.2 gap: surrogate is 0.2") {
    Tensor w = Tensor::full({1, 1, 3, 3}, 0.5);
    Tensor s = Tensor::full({1, 1, 3, 3}, 0.3);
    MaskMap m = automask({w}, {s});
    for (double v : m.data()) CHECK(v == 0.0);
    auto reg = mask_regularization(m, w, s);
    CHECK(value_of(reg.surrogate) == Catch::Approx(0.2));
    CHECK(reg.literal == 1.0);
  }
  SECTION("surrogate nonnegative, pixelwise zero wherever mask is 1") {
    Rng rng(217);
    Tensor w = random_tensor({1, 1, 6, 6}, rng, 0.0, 1.0);
    Tensor s = random_tensor({1, 1, 6, 6}, rng, 0.0, 1.0);
    MaskMap m = automask({w}, {s});
    auto reg = mask_regularization(m, w, s);
    CHECK(value_of(reg.surrogate) >= 0.0);
    Tensor hinge = relu(sub(w, s));
    for (int i = 0; i < m.size(); ++i) {
      if (m[i] == 1.0) CHECK(hinge[i] == 0.0);
      if (m[i] == 0.0 && w[i] > s[i]) CHECK(hinge[i] > 0.0);
    }
  }
}

TEST_CASE("smoothness") {
  Rng rng(223);
  Tensor img = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
  SECTION("constant disparity gives zero") {
    Tensor d = Tensor::full({1, 1, 6, 6}, 0.4);
    CHECK(value_of(smoothness(d, img)) == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("scale invariance: smoothness(k*d) == smoothness(d)") {
    Tensor d = random_tensor({1, 1, 6, 6}, rng, 0.2, 0.8);
    double a = value_of(smoothness(d, img));
    Tensor d2 = d.clone();
    for (double& v : d2.data()) v *= 7.3;
    double b = value_of(smoothness(d2, img));
    CHECK(std::fabs(a - b) < 1e-12);
  }
  SECTION("disparity step attenuated by an aligned image step") {
    // disparity step of height h aligned with image step of magnitude g:
    // the x-term contribution at the step column is |dn_step| * exp(-g)
    auto make_step = [](double lo, double hi, int chans) {
      Tensor t = Tensor::zeros({1, chans, 4, 4});
      for (int c = 0; c < chans; ++c)
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x)
            t.data()[static_cast<size_t>((c * 4 + y) * 4 + x)] = x < 2 ? lo : hi;
      return t;
    };
    Tensor d = make_step(0.2, 0.2 + 0.1, 1);
    Tensor flat_img = Tensor::full({1, 1, 4, 4}, 0.5);
    Tensor edge_img = make_step(0.1, 0.1 + 0.6, 1);
    double plain = value_of(smoothness(d, flat_img));
    double attenuated = value_of(smoothness(d, edge_img));
    CHECK(attenuated == Catch::Approx(plain * std::exp(-0.6)).epsilon(1e-9));
  }
  SECTION("nonpositive mean disparity throws") {
    CHECK_THROWS(smoothness(Tensor::full({1, 1, 4, 4}, -0.5), Tensor::zeros({1, 3, 4, 4})));
  }
  SECTION("gradient check") {
    Tensor d = random_tensor({1, 1, 6, 6}, rng, 0.2, 0.8);
    auto res = gradcheck(
        "smoothness", [&](Tape&, std::vector<Tensor>& in) { return smoothness(in[0], img.detached()); }, {d}, 1e-4);
    INFO(res.max_rel_err);
    CHECK(res.passed);
  }
}

TEST_CASE("total_loss composition") {
  Rng rng(227);
  const Shape map_shape{1, 1, 4, 4};
  LossComponents c;
  c.photo_maps = {random_tensor(map_shape, rng, 0.0, 1.0), random_tensor(map_shape, rng, 0.0, 1.0)};
  c.smooth_terms = {Tensor::scalar(0.02), Tensor::scalar(0.03)};
  c.mask_reg = Tensor::scalar(0.005);
  c.aug_term = Tensor::scalar(0.4);
  MaskMap mask = Tensor::full(map_shape, 1.0);
  LossWeights w;

  SECTION("all components zero gives zero") {
    LossComponents z;
    z.photo_maps = {Tensor::zeros(map_shape)};
    z.smooth_terms = {Tensor::scalar(0.0)};
    z.mask_reg = Tensor::scalar(0.0);
    z.aug_term = Tensor::scalar(0.0);
    CHECK(value_of(total_loss(z, mask, w).value) == 0.0);
  }

  SECTION("weighted sum reproduces each term when other weights are zeroed") {
    LossWeights only_p;
    only_p.alpha_p = 1.0;
    only_p.alpha_s = only_p.alpha_a = only_p.alpha_r = 0.0;
    TotalLoss tp = total_loss(c, mask, only_p);
    double want = 0.5 * (value_of(reduce_mean(c.photo_maps[0])) + value_of(reduce_mean(c.photo_maps[1])));
    CHECK(value_of(tp.value) == Catch::Approx(want).margin(1e-15));

    LossWeights only_a;
    only_a.alpha_p = only_a.alpha_s = only_a.alpha_r = 0.0;
    only_a.alpha_a = 1.0;
    CHECK(value_of(total_loss(c, mask, only_a).value) == Catch::Approx(0.4).margin(1e-15));
  }

  SECTION("doubling alpha_p exactly doubles the photometric gradient") {
    Parameter p("p", {numel(map_shape)});
    for (int i = 0; i < p.size(); ++i) p.value[static_cast<size_t>(i)] = 0.1 * i;
    auto grad_with = [&](double ap) {
      p.zero_grad();
      Tape tape;
      Tensor leaf = tape.leaf(p);
      LossComponents cc;
      cc.photo_maps = {reshape(mul(leaf, leaf), map_shape)};
      cc.smooth_terms = {Tensor::scalar(0.0)};
      cc.mask_reg = Tensor::scalar(0.0);
      LossWeights ww;
      ww.alpha_p = ap;
      ww.alpha_a = 0.0;
      tape.backward(total_loss(cc, mask, ww).value);
      return p.grad;
    };
    auto g1 = grad_with(1.0);
    auto g2 = grad_with(2.0);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == Catch::Approx(2.0 * g1[i]).margin(1e-18));
  }

  SECTION("masked loss never exceeds unmasked loss") {
    Rng rng2(229);
    MaskMap m = Tensor::zeros(map_shape);
    for (double& v : m.data()) v = rng2.bernoulli(0.5) ? 1.0 : 0.0;
    double masked = value_of(reduce_mean(mul(c.photo_maps[0], m)));
    double unmasked = value_of(reduce_mean(c.photo_maps[0]));
    CHECK(masked <= unmasked + 1e-15);
  }

  SECTION("component report recombines to the total") {
    TotalLoss t = total_loss(c, mask, w);
    double recombined = w.alpha_p * t.photometric + w.alpha_s * t.smooth + w.alpha_r * t.mask_reg + w.alpha_a * t.aug;
    CHECK(std::fabs(value_of(t.value) - recombined) < 1e-12);
  }

  SECTION("missing components throw") {
    LossComponents missing;
    missing.photo_maps = c.photo_maps;
    missing.smooth_terms = {Tensor::scalar(0.0)};  // count mismatch
    missing.mask_reg = Tensor::scalar(0.0);
    CHECK_THROWS(total_loss(missing, mask, w));

    LossComponents no_aug;
    no_aug.photo_maps = c.photo_maps;
    no_aug.smooth_terms = c.smooth_terms;
    no_aug.mask_reg = c.mask_reg;
    CHECK_THROWS(total_loss(no_aug, mask, w));  // alpha_a > 0 but no aug term
    LossWeights wa = w;
    wa.alpha_a = 0.0;
    CHECK_NOTHROW(total_loss(no_aug, mask, wa));
  }
}

TEST_CASE("default weights match the configured training setup") {
  LossWeights w;
  CHECK(w.alpha_p == 1.0);
  CHECK(w.alpha_s == 0.001);
  CHECK(w.alpha_a == 0.1);
  CHECK(w.alpha_r == 0.001);
  CHECK(w.alpha == 0.85);
}

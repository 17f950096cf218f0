#include <catch2/catch_amalgamated.hpp>

#include "depthfit/attention.hpp"
#include "depthfit/gradcheck.hpp"

using namespace depthfit;

namespace {

AttentionParams random_params(int c, Rng& rng, double scale = 0.3) {
  AttentionParams p;
  p.w_theta = random_tensor({c / 2, c, 1, 1}, rng, -scale, scale);
  p.w_phi = random_tensor({c / 2, c, 1, 1}, rng, -scale, scale);
  p.w_g = random_tensor({c, c, 1, 1}, rng, -scale, scale);
  p.w_f = random_tensor({1, c, 1, 1}, rng, -scale, scale);
  return p;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("fast form equals the brute-force double loop") {
  Rng rng(301);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({2, 8, 5, 5}, rng, -1.0, 1.0);
    AttentionParams p = random_params(8, rng);
    Tensor fast = relational_self_attention(x, p);
    Tensor brute = brute_force_attention(x, p);
    INFO("trial " << trial << " max diff " << max_abs_diff(fast, brute));
    CHECK(max_abs_diff(fast, brute) < 1e-10);
  }
}

TEST_CASE("spatially uniform input: every position gets the same attention") {
  Rng rng(303);
  AttentionParams p = random_params(8, rng);
  // uniform feature map: all positions share one feature vector
  Tensor x = Tensor::zeros({1, 8, 4, 4});
  std::vector<double> f(8);
  for (double& v : f) v = rng.uniform(-1, 1);
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 16; ++i) x.data()[static_cast<size_t>(c * 16 + i)] = f[static_cast<size_t>(c)];
  Tensor y = relational_self_attention(x, p);
  // every position identical
  for (int c = 0; c < 8; ++c)
    for (int i = 1; i < 16; ++i)
      CHECK(y.data()[static_cast<size_t>(c * 16 + i)] == Catch::Approx(y.data()[static_cast<size_t>(c * 16)]).margin(1e-12));
  // and equal to the single-position case
  Tensor x1 = Tensor::zeros({1, 8, 1, 1});
  for (int c = 0; c < 8; ++c) x1.data()[static_cast<size_t>(c)] = f[static_cast<size_t>(c)];
  Tensor y1 = relational_self_attention(x1, p);
  for (int c = 0; c < 8; ++c)
    CHECK(y.data()[static_cast<size_t>(c * 16)] == Catch::Approx(y1.data()[static_cast<size_t>(c)]).margin(1e-12));
}

TEST_CASE("single position matches the hand formula") {
  Rng rng(307);
  AttentionParams p = random_params(4, rng);
  Tensor x = random_tensor({1, 4, 1, 1}, rng, -1.0, 1.0);
  Tensor y = relational_self_attention(x, p);

  // y = w_f^T [theta(x), phi(x)] * g(x) + x
  auto matvec = [&](const Tensor& w, int oc) {
    std::vector<double> out(static_cast<size_t>(oc), 0.0);
    for (int o = 0; o < oc; ++o)
      for (int ic = 0; ic < 4; ++ic) out[static_cast<size_t>(o)] += w.data()[static_cast<size_t>(o * 4 + ic)] * x[ic];
    return out;
  };
  auto th = matvec(p.w_theta, 2), ph = matvec(p.w_phi, 2), gv = matvec(p.w_g, 4);
  double s = p.w_f[0] * th[0] + p.w_f[1] * th[1] + p.w_f[2] * ph[0] + p.w_f[3] * ph[1];
  for (int c = 0; c < 4; ++c) CHECK(y[c] == Catch::Approx(x[c] + s * gv[static_cast<size_t>(c)]).margin(1e-12));
}

TEST_CASE("brute force: zero g-weights give identity, doubling g doubles Y") {
  Rng rng(311);
  Tensor x = random_tensor({1, 8, 3, 3}, rng, -1.0, 1.0);
  AttentionParams p = random_params(8, rng);

  AttentionParams zero_g = p;
  zero_g.w_g = Tensor::zeros({8, 8, 1, 1});
  Tensor out = brute_force_attention(x, zero_g);
  CHECK(out.data() == x.data());

  Tensor y1 = brute_force_attention(x, p);
  AttentionParams doubled = p;
  doubled.w_g = p.w_g.clone();
  for (double& v : doubled.w_g.data()) v *= 2.0;
  Tensor y2 = brute_force_attention(x, doubled);
  for (int i = 0; i < x.size(); ++i)
    CHECK(y2[i] - x[i] == Catch::Approx(2.0 * (y1[i] - x[i])).margin(1e-12));
}

TEST_CASE("permutation equivariance over spatial positions") {
  Rng rng(313);
  Tensor x = random_tensor({1, 8, 2, 3}, rng, -1.0, 1.0);
  AttentionParams p = random_params(8, rng);
  Tensor y = relational_self_attention(x, p);

  // permute the 6 positions
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  Tensor xp = Tensor::zeros({1, 8, 2, 3});
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 6; ++i)
      xp.data()[static_cast<size_t>(c * 6 + i)] = x.data()[static_cast<size_t>(c * 6 + perm[static_cast<size_t>(i)])];
  Tensor yp = relational_self_attention(xp, p);
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 6; ++i)
      CHECK(yp.data()[static_cast<size_t>(c * 6 + i)] ==
            Catch::Approx(y.data()[static_cast<size_t>(c * 6 + perm[static_cast<size_t>(i)])]).margin(1e-12));
}

TEST_CASE("attach doubles channels and preserves X in the second half") {
  Rng rng(317);
  Tensor x = random_tensor({2, 8, 4, 4}, rng, -1.0, 1.0);
  AttentionParams p = random_params(8, rng);
  Tensor out = attach(x, p);
  CHECK(out.shape == Shape{2, 16, 4, 4});
  Tensor back = slice(out, 1, 8, 8);
  CHECK(back.data() == x.data());
}

TEST_CASE("with all weights zero, attach degrades to concat(X, X)") {
  Rng rng(319);
  Tensor x = random_tensor({1, 8, 3, 3}, rng, -1.0, 1.0);
  AttentionParams p;
  p.w_theta = Tensor::zeros({4, 8, 1, 1});
  p.w_phi = Tensor::zeros({4, 8, 1, 1});
  p.w_g = Tensor::zeros({8, 8, 1, 1});
  p.w_f = Tensor::zeros({1, 8, 1, 1});
  Tensor out = attach(x, p);
  Tensor first = slice(out, 1, 0, 8);
  Tensor second = slice(out, 1, 8, 8);
  CHECK(first.data() == x.data());
  CHECK(second.data() == x.data());
}

TEST_CASE("gradient flows through both attach paths and all parameters") {
  Rng rng(323);
  Tensor x = random_tensor({1, 4, 3, 3}, rng, -1.0, 1.0);
  AttentionParams base = random_params(4, rng);
  Tensor readout = random_tensor({1, 8, 3, 3}, rng, -1.0, 1.0);

  auto res = gradcheck(
      "attach",
      [&](Tape&, std::vector<Tensor>& in) {
        AttentionParams p;
        p.w_theta = in[1];
        p.w_phi = in[2];
        p.w_g = in[3];
        p.w_f = in[4];
        return reduce_sum(mul(attach(in[0], p), readout));
      },
      {x, base.w_theta, base.w_phi, base.w_g, base.w_f}, 1e-5);
  INFO(res.max_rel_err);
  CHECK(res.passed);

  // explicit nonzero-gradient claim on X via both paths
  Tape tape;
  Tensor xw = tape.watch(x);
  AttentionParams p = base;
  tape.backward(reduce_sum(mul(attach(xw, p), readout)));
  double norm = 0.0;
  for (double g : tape.grad(xw.node)) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("channel mismatch with params throws") {
  Rng rng(329);
  Tensor x = random_tensor({1, 6, 2, 2}, rng);
  AttentionParams p = random_params(8, rng);
  CHECK_THROWS(relational_self_attention(x, p));
  Tensor odd = random_tensor({1, 7, 2, 2}, rng);
  CHECK_THROWS(relational_self_attention(odd, random_params(8, rng)));
}

TEST_CASE("acceptance-grade oracle: 20 random (2,8,6,6) inputs agree to 1e-10") {
  Rng rng(331);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({2, 8, 6, 6}, rng, -1.0, 1.0);
    AttentionParams p = random_params(8, rng);
    worst = std::max(worst, max_abs_diff(relational_self_attention(x, p), brute_force_attention(x, p)));
  }
  INFO("worst " << worst);
  CHECK(worst < 1e-10);
}

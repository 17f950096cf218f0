#pragma once

#include <functional>
#include <string>
#include <vector>

#include "depthfit/attention.hpp"
#include "depthfit/augment.hpp"
#include "depthfit/geometry.hpp"
#include "depthfit/gradcheck.hpp"
#include "depthfit/losses.hpp"

namespace depthfit {

struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<GradCheckResult()> run;
};

// The registered finite-difference checks: every differentiable op, plus the
// loss/geometry composites at their looser interpolation tolerance.
inline std::vector<GradCheckCase> standard_gradchecks() {
  std::vector<GradCheckCase> cases;
  auto add_case = [&](std::string name, double tol, GradFn fn, std::vector<Tensor> inputs) {
    cases.push_back(GradCheckCase{
        name, tol, [name, tol, fn = std::move(fn), inputs = std::move(inputs)]() {
          return gradcheck(name, fn, inputs, tol);
        }});
  };

  Rng rng(0xfdc0);
  const Shape img_shape{2, 3, 6, 6};

  // elementwise binaries; operand ranges keep min/max off their ties
  Tensor a = random_tensor_away_from_zero(img_shape, rng, 0.3, 0.9);
  Tensor b = random_tensor_away_from_zero(img_shape, rng, 1.2, 2.0);
  using Fn2 = Tensor (*)(const Tensor&, const Tensor&);
  std::vector<std::pair<const char*, Fn2>> bins = {
      {"elementwise.add", [](const Tensor& x, const Tensor& y) { return add(x, y); }},
      {"elementwise.sub", [](const Tensor& x, const Tensor& y) { return sub(x, y); }},
      {"elementwise.mul", [](const Tensor& x, const Tensor& y) { return mul(x, y); }},
      {"elementwise.div", [](const Tensor& x, const Tensor& y) { return div(x, y); }},
      {"elementwise.min2", [](const Tensor& x, const Tensor& y) { return min2(x, y); }},
      {"elementwise.max2", [](const Tensor& x, const Tensor& y) { return max2(x, y); }},
  };
  for (auto& [name, fn] : bins) {
    auto f = fn;
    add_case(name, 1e-5,
             [f](Tape&, std::vector<Tensor>& in) { return reduce_mean(f(in[0], in[1])); }, {a, b});
  }
  add_case("elementwise.scalar_broadcast", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(mul(in[0], in[1])); },
           {random_tensor(img_shape, rng), Tensor::scalar(0.7)});
  add_case("elementwise.channel_broadcast", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(mul(in[0], in[1])); },
           {random_tensor(img_shape, rng), random_tensor({3}, rng, 0.5, 1.5)});

  // unaries
  using Fn1 = Tensor (*)(const Tensor&);
  std::vector<std::tuple<const char*, Fn1, Tensor>> unaries = {
      {"elementwise.abs", abs_t, random_tensor_away_from_zero(img_shape, rng)},
      {"elementwise.exp", exp_t, random_tensor(img_shape, rng)},
      {"elementwise.log", log_t, random_tensor(img_shape, rng, 0.3, 2.0)},
      {"elementwise.sqrt", sqrt_t, random_tensor(img_shape, rng, 0.3, 2.0)},
      {"elementwise.sin", sin_t, random_tensor(img_shape, rng, -1.5, 1.5)},
      {"elementwise.cos", cos_t, random_tensor(img_shape, rng, -1.5, 1.5)},
      {"activation.relu", relu, random_tensor_away_from_zero(img_shape, rng)},
      {"activation.elu", elu, random_tensor_away_from_zero(img_shape, rng)},
      {"activation.sigmoid", sigmoid, random_tensor(img_shape, rng, -2.0, 2.0)},
  };
  for (auto& [name, fn, input] : unaries) {
    auto f = fn;
    add_case(name, 1e-5, [f](Tape&, std::vector<Tensor>& in) { return reduce_mean(f(in[0])); }, {input});
  }

  // reductions and shape ops
  add_case("reduce.mean_all", 1e-5, [](Tape&, std::vector<Tensor>& in) { return reduce_mean(in[0]); },
           {random_tensor(img_shape, rng)});
  add_case("reduce.sum_axes", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(mul(reduce_sum(in[0], {1}, true), 0.25)); },
           {random_tensor(img_shape, rng)});
  add_case("reduce.mean_spatial", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_sum(reduce_mean(in[0], {2, 3}, true)); },
           {random_tensor(img_shape, rng)});
  add_case("concat_channels", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor c = concat_channels(in[0], in[1]);
             return reduce_mean(mul(c, c));
           },
           {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 3, 4, 4}, rng)});
  add_case("slice", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor s = slice(in[0], 1, 1, 2);
             return reduce_mean(mul(s, s));
           },
           {random_tensor({1, 4, 4, 4}, rng)});
  add_case("reshape", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(reshape(in[0], {4, 16})); },
           {random_tensor({1, 4, 4, 4}, rng)});

  // conv and windows
  add_case("conv2d.s1p1", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor o = conv2d(in[0], in[1], in[2], 1, 1);
             return reduce_mean(mul(o, o));
           },
           {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5),
            random_tensor({4}, rng, -0.5, 0.5)});
  add_case("conv2d.s2", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(conv2d(in[0], in[1], in[2], 2, 1)); },
           {random_tensor({2, 3, 6, 6}, rng), random_tensor({2, 3, 3, 3}, rng, -0.5, 0.5),
            random_tensor({2}, rng, -0.5, 0.5)});
  add_case("conv2d.1x1", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor o = conv2d(in[0], in[1]);
             return reduce_mean(mul(o, o));
           },
           {random_tensor({1, 4, 5, 5}, rng), random_tensor({2, 4, 1, 1}, rng, -0.5, 0.5)});
  add_case("box_mean3", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor m = box_mean3(in[0]);
             return reduce_mean(mul(m, m));
           },
           {random_tensor({1, 2, 5, 5}, rng)});

  // resize / sampling
  add_case("resize.bilinear_up", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor o = resize_bilinear(in[0], 7, 9);
             return reduce_mean(mul(o, o));
           },
           {random_tensor({1, 2, 4, 5}, rng)});
  add_case("resize.bilinear_down", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(resize_bilinear(in[0], 3, 3)); },
           {random_tensor({1, 2, 6, 6}, rng)});
  {
    Tensor smooth_src = Tensor::zeros({1, 2, 6, 6});
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
          smooth_src.data()[static_cast<size_t>((c * 6 + y) * 6 + x)] = 0.5 + 0.4 * std::sin(0.4 * x + 0.3 * y + c);
    Tensor grid = Tensor::zeros({1, 2, 3, 3});
    for (int i = 0; i < 9; ++i) {
      grid.data()[static_cast<size_t>(i)] = rng.uniform(0.3, 4.4);
      grid.data()[static_cast<size_t>(9 + i)] = rng.uniform(0.3, 4.4);
    }
    add_case("grid_sample", 1e-4,
             [](Tape&, std::vector<Tensor>& in) {
               Tensor o = grid_sample_bilinear(in[0], in[1]);
               return reduce_mean(mul(o, o));
             },
             {smooth_src, grid});
  }

  // losses
  add_case("ssim", 1e-4,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(ssim(in[0], in[1])); },
           {random_tensor({1, 2, 6, 6}, rng, 0.0, 1.0), random_tensor({1, 2, 6, 6}, rng, 0.0, 1.0)});
  add_case("pe", 1e-4,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(pe(in[0], in[1])); },
           {random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0), random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0)});
  add_case("min_reprojection", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(min_reprojection({in[0], in[1]})); },
           {random_tensor({1, 1, 5, 5}, rng, 0.0, 0.4), random_tensor({1, 1, 5, 5}, rng, 0.6, 1.0)});
  {
    Tensor img = random_tensor({1, 3, 6, 6}, rng, 0.0, 1.0);
    add_case("smoothness", 1e-5,
             [img](Tape&, std::vector<Tensor>& in) { return smoothness(in[0], img); },
             {random_tensor({1, 1, 6, 6}, rng, 0.2, 0.8)});
  }
  {
    Tensor w_vals = random_tensor({1, 1, 5, 5}, rng, 0.0, 0.4);
    Tensor s_vals = random_tensor({1, 1, 5, 5}, rng, 0.5, 1.0);
    add_case("mask_regularization", 1e-5,
             [](Tape&, std::vector<Tensor>& in) {
               MaskMap m = automask({in[0].detached()}, {in[1].detached()});
               return mask_regularization(m, in[0], in[1]).surrogate;
             },
             {w_vals, s_vals});
  }
  {
    Tensor validity = Tensor::full({1, 1, 4, 4}, 1.0);
    validity.data()[3] = 0.0;
    Tensor depth_true = random_tensor({1, 1, 4, 4}, rng, 2.0, 3.0);  // gradient-stopped side
    add_case("augmentation_loss", 1e-5,
             [validity, depth_true](Tape&, std::vector<Tensor>& in) {
               return augmentation_loss(depth_true, in[0], validity);
             },
             {random_tensor({1, 1, 4, 4}, rng, 4.0, 5.0)});
  }

  // geometry
  add_case("disparity_to_depth", 1e-5,
           [](Tape&, std::vector<Tensor>& in) { return reduce_mean(disparity_to_depth(in[0], 0.1, 100.0)); },
           {random_tensor({1, 1, 4, 4}, rng, 0.05, 0.95)});
  add_case("rotation_entries", 1e-5,
           [](Tape&, std::vector<Tensor>& in) {
             Tensor rx = slice(in[0], 1, 0, 1), ry = slice(in[0], 1, 1, 1), rz = slice(in[0], 1, 2, 1);
             auto E = detail::rotation_entries(rx, ry, rz);
             Tensor s = E[0];
             for (int i = 1; i < 9; ++i) s = add(s, mul(E[static_cast<size_t>(i)], 0.2 + 0.1 * i));
             return reduce_sum(s);
           },
           {random_tensor({1, 3}, rng, -0.4, 0.4)});
  {
    Intrinsics K = default_intrinsics(8, 8);
    Tensor smooth_src = Tensor::zeros({1, 2, 8, 8});
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          smooth_src.data()[static_cast<size_t>((c * 8 + y) * 8 + x)] = 0.5 + 0.4 * std::sin(0.5 * x + 0.7 * y + c);
    Tensor target = random_tensor({1, 2, 8, 8}, rng, 0.0, 1.0);
    Tensor pose = Tensor::from({1, 6}, {0.01, -0.02, 0.015, 0.3, -0.1, 0.05});
    Tensor depth = random_tensor({1, 1, 8, 8}, rng, 3.0, 6.0);
    add_case("warp.pose_and_depth", 1e-4,
             [smooth_src, target, K](Tape&, std::vector<Tensor>& in) {
               Tensor w = warp(smooth_src, in[1], in[0], K);
               Tensor diff = sub(w, target);
               return reduce_mean(mul(diff, diff));
             },
             {pose, depth});
    add_case("warp.source", 1e-4,
             [pose, depth, target, K](Tape&, std::vector<Tensor>& in) {
               Tensor w = warp(in[0], depth, pose, K);
               Tensor diff = sub(w, target);
               return reduce_mean(mul(diff, diff));
             },
             {smooth_src});
  }

  // attention
  {
    Tensor x = random_tensor({1, 4, 3, 3}, rng);
    AttentionParams base;
    base.w_theta = random_tensor({2, 4, 1, 1}, rng, -0.4, 0.4);
    base.w_phi = random_tensor({2, 4, 1, 1}, rng, -0.4, 0.4);
    base.w_g = random_tensor({4, 4, 1, 1}, rng, -0.4, 0.4);
    base.w_f = random_tensor({1, 4, 1, 1}, rng, -0.4, 0.4);
    Tensor readout = random_tensor({1, 8, 3, 3}, rng);
    add_case("attention.attach", 1e-5,
             [readout](Tape&, std::vector<Tensor>& in) {
               AttentionParams p;
               p.w_theta = in[1];
               p.w_phi = in[2];
               p.w_g = in[3];
               p.w_f = in[4];
               return reduce_sum(mul(attach(in[0], p), readout));
             },
             {x, base.w_theta, base.w_phi, base.w_g, base.w_f});
  }

  return cases;
}

}  // namespace depthfit

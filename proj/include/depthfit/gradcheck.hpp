#pragma once

#include <functional>
#include <string>
#include <vector>

#include "depthfit/ops.hpp"
#include "depthfit/rng.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Builds a scalar loss from watched copies of the inputs.
using GradFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

// Central finite differences against the tape's analytic gradients.
// rel err per element: |a - n| / max(1, |a|, |n|).
inline GradCheckResult gradcheck(const std::string& name, const GradFn& f, const std::vector<Tensor>& inputs,
                                 double tolerance, double eps = 1e-6) {
  GradCheckResult res;
  res.name = name;
  res.tolerance = tolerance;

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> watched;
    watched.reserve(inputs.size());
    for (const Tensor& x : inputs) watched.push_back(tape.watch(x.clone()));
    Tensor loss = f(tape, watched);
    tape.backward(loss);
    for (Tensor& x : watched) analytic.push_back(tape.grad(x.node));
  }

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape tape;
    std::vector<Tensor> watched;
    for (const Tensor& x : pts) watched.push_back(tape.watch(x));
    return value_of(f(tape, watched));
  };

  std::vector<Tensor> pts;
  for (const Tensor& x : inputs) pts.push_back(x.clone());
  for (size_t i = 0; i < pts.size(); ++i) {
    std::vector<double>& data = pts[i].data();
    for (size_t j = 0; j < data.size(); ++j) {
      double keep = data[j];
      data[j] = keep + eps;
      double up = eval(pts);
      data[j] = keep - eps;
      double down = eval(pts);
      data[j] = keep;
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[i][j];
      double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > res.max_rel_err) res.max_rel_err = rel;
    }
  }
  res.passed = res.max_rel_err < tolerance;
  return res;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Random values bounded away from zero; keeps finite differences off the
// kinks of abs/min/relu style ops.
inline Tensor random_tensor_away_from_zero(Shape shape, Rng& rng, double min_mag = 0.2, double max_mag = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) {
    double mag = rng.uniform(min_mag, max_mag);
    v = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

}  // namespace depthfit

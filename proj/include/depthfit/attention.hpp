#pragma once

#include "depthfit/ops.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

// Relational self-attention over spatial positions of a feature map.
//
//   y_i = (1/N) sum_j  w_f^T [theta(x_i), phi(x_j)] * g(x_j)
//
// theta and phi embed to C/2 channels and only feed the pairwise scalar; g
// embeds to C channels so the residual X + Y typechecks. The pair scalar is
// linear in [theta_i, phi_j] (no softmax, no nonlinearity), which makes the
// O(N^2) sum collapse to O(N): split w_f into its theta and phi halves, then
//   y_i = (w_f1^T theta_i) * mean_j g_j  +  mean_j (w_f2^T phi_j) g_j.
struct AttentionParams {
  Tensor w_theta;  // (C/2, C, 1, 1)
  Tensor w_phi;    // (C/2, C, 1, 1)
  Tensor w_g;      // (C,   C, 1, 1)
  Tensor w_f;      // (1,   C, 1, 1) over the concatenated [theta, phi] pair

  void validate(int channels) const {
    if (channels % 2 != 0) throw std::invalid_argument("attention: channel count must be even");
    int half = channels / 2;
    auto want = [&](const Tensor& t, int oc, int ic, const char* name) {
      if (t.rank() != 4 || t.dim(0) != oc || t.dim(1) != ic || t.dim(2) != 1 || t.dim(3) != 1)
        throw std::invalid_argument(std::string("attention: ") + name + " must be (" + std::to_string(oc) + "," +
                                    std::to_string(ic) + ",1,1), got " + shape_str(t.shape));
    };
    want(w_theta, half, channels, "w_theta");
    want(w_phi, half, channels, "w_phi");
    want(w_g, channels, channels, "w_g");
    want(w_f, 1, channels, "w_f");
  }
};

// Fast O(N) form. Returns X + Y (residual).
inline Tensor relational_self_attention(const Tensor& x, const AttentionParams& p) {
  if (x.rank() != 4) throw std::invalid_argument("attention: input must be (N,C,H,W)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  p.validate(c);
  const int half = c / 2;
  const double n_pos = static_cast<double>(h) * w;

  Tensor theta = conv2d(x, p.w_theta);
  Tensor phi = conv2d(x, p.w_phi);
  Tensor g = conv2d(x, p.w_g);
  Tensor a = conv2d(theta, slice(p.w_f, 1, 0, half));   // (N,1,H,W): w_f1^T theta_i
  Tensor b = conv2d(phi, slice(p.w_f, 1, half, half));  // (N,1,H,W): w_f2^T phi_j

  std::vector<Tensor> items;
  items.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Tensor gi = (n == 1) ? g : slice(g, 0, i, 1);
    Tensor ai = (n == 1) ? a : slice(a, 0, i, 1);
    Tensor bi = (n == 1) ? b : slice(b, 0, i, 1);
    // mean_j g_j as a (C,1,1,1) kernel; y1[c'] = a_i * mean_g[c'] via 1x1 conv
    Tensor mean_g = reshape(reduce_mean(gi, {2, 3}, true), {c, 1, 1, 1});
    Tensor y1 = conv2d(ai, mean_g);  // (1,C,H,W)
    // mean_j b_j g_j: correlate g with b over all positions -> (1,C,1,1)
    Tensor m = mul(reshape(conv2d(bi, reshape(gi, {c, 1, h, w})), {1, c, 1, 1}), 1.0 / n_pos);
    items.push_back(add(y1, m));  // per-channel broadcast of m
  }
  Tensor y = (n == 1) ? items[0] : concat(0, items);
  return add(x, y);
}

// Literal double loop over position pairs. Reference implementation for the
// fast form; value-only, intended for small inputs.
inline Tensor brute_force_attention(const Tensor& x, const AttentionParams& p) {
  if (x.rank() != 4) throw std::invalid_argument("attention: input must be (N,C,H,W)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  p.validate(c);
  const int half = c / 2;
  const int npos = h * w;
  if (npos > 256) throw std::invalid_argument("brute_force_attention: too many positions");

  const double* px = x.values->data();
  const double* wt = p.w_theta.values->data();
  const double* wp = p.w_phi.values->data();
  const double* wg = p.w_g.values->data();
  const double* wf = p.w_f.values->data();

  Tensor out = x.clone();
  for (int b = 0; b < n; ++b) {
    const double* xb = px + static_cast<long long>(b) * c * npos;
    auto feature = [&](int pos, int ch) { return xb[static_cast<long long>(ch) * npos + pos]; };
    // per-position embeddings
    std::vector<double> theta(static_cast<size_t>(npos) * half), phi(static_cast<size_t>(npos) * half),
        gv(static_cast<size_t>(npos) * c);
    for (int j = 0; j < npos; ++j) {
      for (int o = 0; o < half; ++o) {
        double st = 0.0, sp = 0.0;
        for (int ic = 0; ic < c; ++ic) {
          st += wt[static_cast<long long>(o) * c + ic] * feature(j, ic);
          sp += wp[static_cast<long long>(o) * c + ic] * feature(j, ic);
        }
        theta[static_cast<size_t>(j) * half + o] = st;
        phi[static_cast<size_t>(j) * half + o] = sp;
      }
      for (int o = 0; o < c; ++o) {
        double sg = 0.0;
        for (int ic = 0; ic < c; ++ic) sg += wg[static_cast<long long>(o) * c + ic] * feature(j, ic);
        gv[static_cast<size_t>(j) * c + o] = sg;
      }
    }
    double* ob = out.values->data() + static_cast<long long>(b) * c * npos;
    for (int i = 0; i < npos; ++i) {
      std::vector<double> y(static_cast<size_t>(c), 0.0);
      for (int j = 0; j < npos; ++j) {
        double s = 0.0;  // w_f^T [theta_i, phi_j]
        for (int k = 0; k < half; ++k) s += wf[k] * theta[static_cast<size_t>(i) * half + k];
        for (int k = 0; k < half; ++k) s += wf[half + k] * phi[static_cast<size_t>(j) * half + k];
        for (int o = 0; o < c; ++o) y[static_cast<size_t>(o)] += s * gv[static_cast<size_t>(j) * c + o];
      }
      for (int o = 0; o < c; ++o) ob[static_cast<long long>(o) * npos + i] += y[static_cast<size_t>(o)] / npos;
    }
  }
  return out;
}

// The configuration fed to the depth decoder: attention output concatenated
// with the raw encoder features, (N,2C,H,W).
inline Tensor attach(const Tensor& x, const AttentionParams& p) {
  return concat_channels(relational_self_attention(x, p), x);
}

}  // namespace depthfit

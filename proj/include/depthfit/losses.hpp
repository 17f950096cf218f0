#pragma once

#include <vector>

#include "depthfit/ops.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

struct LossWeights {
  double alpha_p = 1.0;    // photometric
  double alpha_s = 0.001;  // smoothness
  double alpha_a = 0.1;    // augmentation consistency
  double alpha_r = 0.001;  // mask regularization
  double alpha = 0.85;     // SSIM/L1 blend inside pe

  void validate() const {
    if (alpha_p < 0 || alpha_s < 0 || alpha_a < 0 || alpha_r < 0)
      throw std::invalid_argument("loss weights must be nonnegative");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0,1]");
  }
};

// Binary {0,1} indicator map, excluded from gradient flow.
using MaskMap = Tensor;

// Per-pixel, per-channel SSIM with 3x3 reflect-padded mean/variance windows.
// Stabilizers C1 = 0.01^2, C2 = 0.03^2 for images nominally in [0,1].
inline Tensor ssim(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("ssim: shape mismatch");
  const double c1 = 1e-4, c2 = 9e-4;
  Tensor mu_a = box_mean3(a);
  Tensor mu_b = box_mean3(b);
  Tensor mu_aa = mul(mu_a, mu_a);
  Tensor mu_bb = mul(mu_b, mu_b);
  Tensor mu_ab = mul(mu_a, mu_b);
  Tensor var_a = sub(box_mean3(mul(a, a)), mu_aa);
  Tensor var_b = sub(box_mean3(mul(b, b)), mu_bb);
  Tensor cov = sub(box_mean3(mul(a, b)), mu_ab);
  Tensor num = mul(add(mul(mu_ab, 2.0), c1), add(mul(cov, 2.0), c2));
  Tensor den = mul(add(add(mu_aa, mu_bb), c1), add(add(var_a, var_b), c2));
  return div(num, den);
}

// Photometric error: (alpha/2)(1 - SSIM) + (1 - alpha) |a - b|, averaged over
// channels to a single-channel map (N,1,H,W).
inline Tensor pe(const Tensor& a, const Tensor& b, double alpha = 0.85) {
  if (a.shape != b.shape) throw std::invalid_argument("pe: shape mismatch");
  Tensor ssim_term = mul(sub(1.0, ssim(a, b)), alpha / 2.0);
  Tensor l1_term = mul(abs_t(sub(a, b)), 1.0 - alpha);
  return reduce_mean(add(ssim_term, l1_term), {1}, true);
}

// Per-pixel minimum across source error maps; gradient flows only to the
// argmin source (ties to the earlier entry).
inline Tensor min_reprojection(const std::vector<Tensor>& pe_maps) {
  if (pe_maps.empty()) throw std::invalid_argument("min_reprojection: empty list");
  Tensor m = pe_maps[0];
  for (size_t i = 1; i < pe_maps.size(); ++i) m = min2(m, pe_maps[i]);
  return m;
}

// Auto-mask: 1 where warping explains the target strictly better than the raw
// source does. Pure value comparison; the result never carries gradients.
inline MaskMap automask(const std::vector<Tensor>& pe_warped, const std::vector<Tensor>& pe_static) {
  Tensor w = min_reprojection(pe_warped).detached();
  Tensor s = min_reprojection(pe_static).detached();
  if (w.shape != s.shape) throw std::invalid_argument("automask: shape mismatch");
  Tensor mask = Tensor::zeros(w.shape);
  for (int i = 0; i < w.size(); ++i)
    mask.data()[static_cast<size_t>(i)] = (w[i] < s[i]) ? 1.0 : 0.0;
  return mask;
}

struct MaskRegularization {
  Tensor surrogate;      // differentiable hinge: mean(relu(min_warped - min_static))
  double literal = 0.0;  // mean(1 - mask), logged as a metric
};

// L1 regularization over the inverse mask. The indicator itself has no
// gradient, so the optimized term is a hinge on the defining comparison; the
// literal |1 - mask| mean is reported alongside.
inline MaskRegularization mask_regularization(const MaskMap& mask, const Tensor& pe_warped_min,
                                              const Tensor& pe_static_min) {
  if (mask.shape != pe_warped_min.shape || mask.shape != pe_static_min.shape)
    throw std::invalid_argument("mask_regularization: shape mismatch");
  MaskRegularization out;
  out.surrogate = reduce_mean(relu(sub(pe_warped_min, pe_static_min.detached())));
  double acc = 0.0;
  for (int i = 0; i < mask.size(); ++i) acc += 1.0 - mask[i];
  out.literal = acc / mask.size();
  return out;
}

// Edge-aware first-order smoothness on mean-normalized disparity.
// Forward differences; the last column (x) and last row (y) are dropped.
inline Tensor smoothness(const Tensor& disp, const Tensor& image) {
  if (disp.rank() != 4 || disp.dim(1) != 1) throw std::invalid_argument("smoothness: disp must be (N,1,H,W)");
  if (image.rank() != 4 || image.dim(0) != disp.dim(0) || image.dim(2) != disp.dim(2) ||
      image.dim(3) != disp.dim(3))
    throw std::invalid_argument("smoothness: image/disp resolution mismatch");
  Tensor mean_disp = reduce_mean(disp);
  if (value_of(mean_disp) <= 0.0) throw std::invalid_argument("smoothness: mean disparity must be positive");
  // Exact normalization keeps the loss invariant under disp -> k*disp; the
  // positive-mean precondition already rules the division safe.
  Tensor d = div(disp, mean_disp);

  const int h = disp.dim(2), w = disp.dim(3);
  Tensor dx = abs_t(sub(slice(d, 3, 1, w - 1), slice(d, 3, 0, w - 1)));
  Tensor dy = abs_t(sub(slice(d, 2, 1, h - 1), slice(d, 2, 0, h - 1)));
  Tensor ix = reduce_mean(abs_t(sub(slice(image, 3, 1, w - 1), slice(image, 3, 0, w - 1))), {1}, true);
  Tensor iy = reduce_mean(abs_t(sub(slice(image, 2, 1, h - 1), slice(image, 2, 0, h - 1))), {1}, true);
  Tensor term_x = reduce_mean(mul(dx, exp_t(neg(ix))));
  Tensor term_y = reduce_mean(mul(dy, exp_t(neg(iy))));
  return add(term_x, term_y);
}

struct LossComponents {
  std::vector<Tensor> photo_maps;    // per scale: min-reprojection maps (N,1,H,W)
  std::vector<Tensor> smooth_terms;  // per scale: scalar smoothness
  Tensor mask_reg;                   // scalar hinge surrogate
  Tensor aug_term;                   // scalar, undefined when the second pass is disabled
};

struct TotalLoss {
  Tensor value;  // the optimized scalar
  double photometric = 0.0, smooth = 0.0, mask_reg = 0.0, aug = 0.0;
};

// L_f = alpha_p * mean(mask . L_p) + alpha_s * L_s + alpha_a * L_a
//       + alpha_r * L_r, averaged over scales.
inline TotalLoss total_loss(const LossComponents& c, const MaskMap& mask, const LossWeights& w) {
  w.validate();
  if (c.photo_maps.empty() || c.photo_maps.size() != c.smooth_terms.size())
    throw std::invalid_argument("total_loss: photometric/smoothness scale counts disagree");
  if (!c.mask_reg.defined()) throw std::invalid_argument("total_loss: missing mask regularization term");
  if (w.alpha_a > 0.0 && !c.aug_term.defined())
    throw std::invalid_argument("total_loss: augmentation weight set but term missing");

  MaskMap m = mask.detached();
  Tensor photo_sum, smooth_sum;
  for (size_t s = 0; s < c.photo_maps.size(); ++s) {
    if (c.photo_maps[s].shape != m.shape) throw std::invalid_argument("total_loss: mask/photo map shape mismatch");
    Tensor p = reduce_mean(mul(c.photo_maps[s], m));
    photo_sum = s == 0 ? p : add(photo_sum, p);
    smooth_sum = s == 0 ? c.smooth_terms[s] : add(smooth_sum, c.smooth_terms[s]);
  }
  const double inv_scales = 1.0 / static_cast<double>(c.photo_maps.size());
  Tensor photo = mul(photo_sum, inv_scales);
  Tensor smooth = mul(smooth_sum, inv_scales);

  TotalLoss out;
  out.photometric = value_of(photo);
  out.smooth = value_of(smooth);
  out.mask_reg = value_of(c.mask_reg);
  Tensor total = add(mul(photo, w.alpha_p), mul(smooth, w.alpha_s));
  total = add(total, mul(c.mask_reg, w.alpha_r));
  if (c.aug_term.defined()) {
    out.aug = value_of(c.aug_term);
    total = add(total, mul(c.aug_term, w.alpha_a));
  }
  out.value = total;
  return out;
}

}  // namespace depthfit

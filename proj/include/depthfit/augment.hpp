#pragma once

#include <array>
#include <cmath>

#include "depthfit/losses.hpp"
#include "depthfit/ops.hpp"
#include "depthfit/rng.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

// One sampled augmentation. Geometric fields act identically on image and
// depth; photometric fields and noise act on the image alone.
struct AugParams {
  bool flip_h = false;
  bool has_crop = false;
  double crop_x = 0.0, crop_y = 0.0, crop_w = 0.0, crop_h = 0.0;  // pixels
  bool has_affine = false;
  std::array<double, 6> affine = {1, 0, 0, 0, 1, 0};  // output->input coords, rows (a b c / d e f)
  double brightness = 1.0;
  std::array<double, 3> jitter = {0, 0, 0};
  double gamma = 1.0;
  double saturation = 1.0;  // blend toward luma: 1 = unchanged
  double noise_std = 0.0;

  bool is_identity_geometry() const { return !flip_h && !has_crop && !has_affine; }
  bool is_identity_photometric() const {
    return brightness == 1.0 && jitter == std::array<double, 3>{0, 0, 0} && gamma == 1.0 && saturation == 1.0 &&
           noise_std == 0.0;
  }

  void validate(int width, int height) const {
    if (has_crop) {
      if (crop_x < 0 || crop_y < 0 || crop_w < 1 || crop_h < 1 || crop_x + crop_w > width ||
          crop_y + crop_h > height)
        throw std::invalid_argument("augment: crop not fully inside the image");
    }
    if (has_affine) {
      double det = affine[0] * affine[4] - affine[1] * affine[3];
      if (std::fabs(det) <= 0.1) throw std::invalid_argument("augment: affine too close to singular");
    }
    if (gamma < 0.5 || gamma > 2.0) throw std::invalid_argument("augment: gamma outside [0.5, 2]");
    if (noise_std < 0.0 || noise_std > 0.1) throw std::invalid_argument("augment: noise_std outside [0, 0.1]");
  }
};

struct AugConfig {
  double p_flip = 0.5;
  double p_crop = 0.5;
  double crop_min_keep = 0.7;  // fraction of each dimension the crop retains
  double p_affine = 0.3;
  double scale_min = 0.9, scale_max = 1.2;
  double skew_max = 0.1;
  double p_brightness = 0.5;
  double brightness_min = 0.8, brightness_max = 1.2;
  double p_jitter = 0.5;
  double jitter_max = 0.05;
  double p_gamma = 0.5;
  double gamma_min = 0.8, gamma_max = 1.2;
  double p_saturation = 0.5;
  double saturation_min = 0.8, saturation_max = 1.2;
  double p_noise = 0.5;
  double noise_std_max = 0.05;

  void validate() const {
    for (double p : {p_flip, p_crop, p_affine, p_brightness, p_jitter, p_gamma, p_saturation, p_noise})
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("augment: probabilities must lie in [0,1]");
    if (crop_min_keep <= 0.0 || crop_min_keep > 1.0) throw std::invalid_argument("augment: bad crop_min_keep");
    if (gamma_min < 0.5 || gamma_max > 2.0 || gamma_min > gamma_max)
      throw std::invalid_argument("augment: gamma range outside AugParams bounds");
    if (noise_std_max < 0.0 || noise_std_max > 0.1) throw std::invalid_argument("augment: bad noise_std_max");
    if (scale_min > scale_max || scale_min <= 0.0) throw std::invalid_argument("augment: bad scale range");
    if (skew_max < 0.0 || skew_max > 0.5) throw std::invalid_argument("augment: bad skew_max");
    if (jitter_max < 0.0 || jitter_max > 0.5) throw std::invalid_argument("augment: bad jitter_max");
    if (brightness_min <= 0.0 || brightness_min > brightness_max)
      throw std::invalid_argument("augment: bad brightness range");
    if (saturation_min < 0.0 || saturation_min > saturation_max)
      throw std::invalid_argument("augment: bad saturation range");
  }
};

inline AugParams sample_aug(Rng& rng, const AugConfig& cfg, int width, int height) {
  cfg.validate();
  AugParams p;
  if (rng.bernoulli(cfg.p_flip)) p.flip_h = true;
  if (rng.bernoulli(cfg.p_crop)) {
    p.has_crop = true;
    double kw = rng.uniform(cfg.crop_min_keep, 1.0);
    double kh = rng.uniform(cfg.crop_min_keep, 1.0);
    p.crop_w = std::max(1.0, std::floor(kw * width));
    p.crop_h = std::max(1.0, std::floor(kh * height));
    p.crop_x = std::floor(rng.uniform(0.0, width - p.crop_w + 1.0));
    p.crop_y = std::floor(rng.uniform(0.0, height - p.crop_h + 1.0));
    p.crop_x = std::min(p.crop_x, static_cast<double>(width) - p.crop_w);
    p.crop_y = std::min(p.crop_y, static_cast<double>(height) - p.crop_h);
  }
  if (rng.bernoulli(cfg.p_affine)) {
    p.has_affine = true;
    double sx = rng.uniform(cfg.scale_min, cfg.scale_max);
    double sy = rng.uniform(cfg.scale_min, cfg.scale_max);
    double kx = rng.uniform(-cfg.skew_max, cfg.skew_max);
    double ky = rng.uniform(-cfg.skew_max, cfg.skew_max);
    double tx = rng.uniform(-0.05, 0.05) * width;
    double ty = rng.uniform(-0.05, 0.05) * height;
    // output pixel -> input pixel, about the image center
    double cx = (width - 1) * 0.5, cy = (height - 1) * 0.5;
    // linear part
    double a = 1.0 / sx, b = kx, d = ky, e = 1.0 / sy;
    p.affine = {a, b, cx - a * cx - b * cy + tx, d, e, cy - d * cx - e * cy + ty};
  }
  if (rng.bernoulli(cfg.p_brightness)) p.brightness = rng.uniform(cfg.brightness_min, cfg.brightness_max);
  if (rng.bernoulli(cfg.p_jitter))
    for (double& j : p.jitter) j = rng.uniform(-cfg.jitter_max, cfg.jitter_max);
  if (rng.bernoulli(cfg.p_gamma)) p.gamma = rng.uniform(cfg.gamma_min, cfg.gamma_max);
  if (rng.bernoulli(cfg.p_saturation)) p.saturation = rng.uniform(cfg.saturation_min, cfg.saturation_max);
  if (rng.bernoulli(cfg.p_noise)) p.noise_std = rng.uniform(0.0, cfg.noise_std_max);
  p.validate(width, height);
  return p;
}

namespace detail {

// Bilinear value sampling with border clamp, plus in-bounds tracking.
struct GeoSampler {
  double x, y;
  bool inside;
};

template <class CoordFn>
inline void resample_planes(const std::vector<const Tensor*>& in, std::vector<Tensor*>& out,
                            std::vector<unsigned char>& valid, int h, int w, CoordFn coord) {
  for (int oy = 0; oy < h; ++oy) {
    for (int ox = 0; ox < w; ++ox) {
      GeoSampler s = coord(ox, oy);
      double xc = std::min(std::max(s.x, 0.0), static_cast<double>(w - 1));
      double yc = std::min(std::max(s.y, 0.0), static_cast<double>(h - 1));
      int x0 = static_cast<int>(std::floor(xc));
      int y0 = static_cast<int>(std::floor(yc));
      if (x0 > w - 1) x0 = w - 1;
      if (y0 > h - 1) y0 = h - 1;
      int x1 = std::min(x0 + 1, w - 1);
      int y1 = std::min(y0 + 1, h - 1);
      double wx = xc - x0, wy = yc - y0;
      for (size_t t = 0; t < in.size(); ++t) {
        const Tensor& src = *in[t];
        Tensor& dst = *out[t];
        int channels = src.dim(1);
        for (int c = 0; c < channels; ++c) {
          const double* sp = src.values->data() + static_cast<long long>(c) * h * w;
          double v00 = sp[y0 * w + x0], v01 = sp[y0 * w + x1], v10 = sp[y1 * w + x0], v11 = sp[y1 * w + x1];
          dst.values->data()[static_cast<long long>(c) * h * w + oy * w + ox] =
              (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
        }
      }
      // Only the affine stage can sample out of frame, and it runs last, so
      // positional AND-composition of stage validity is exact.
      valid[static_cast<size_t>(oy * w + ox)] =
          static_cast<unsigned char>(valid[static_cast<size_t>(oy * w + ox)] && s.inside);
    }
  }
}

}  // namespace detail

struct GeometricResult {
  Tensor image;     // transformed image (N=1 slice layout: (1,C,H,W))
  Tensor depth;     // identically transformed depth, gradient-stopped by construction
  MaskMap validity;  // (1,1,H,W) of {0,1}: pixels whose samples stayed in frame
};

// Applies the identical spatial transform (flip -> crop-resize -> affine,
// bilinear) to an image and its depth map. Depth values are warped, never
// rescaled. Identity parameters are a strict no-op.
inline GeometricResult apply_geometric(const Tensor& image, const Tensor& depth, const AugParams& p) {
  if (image.rank() != 4 || depth.rank() != 4 || image.dim(0) != 1 || depth.dim(0) != 1)
    throw std::invalid_argument("apply_geometric: expects single-item (1,C,H,W) tensors");
  if (image.dim(2) != depth.dim(2) || image.dim(3) != depth.dim(3))
    throw std::invalid_argument("apply_geometric: image/depth misaligned");
  const int h = image.dim(2), w = image.dim(3);
  p.validate(w, h);

  GeometricResult r;
  r.image = image.detached();
  r.depth = depth.detached();
  std::vector<unsigned char> valid(static_cast<size_t>(h) * w, 1);

  auto run_stage = [&](auto coord) {
    Tensor img_out = Tensor::zeros(r.image.shape);
    Tensor dep_out = Tensor::zeros(r.depth.shape);
    std::vector<const Tensor*> in{&r.image, &r.depth};
    std::vector<Tensor*> out{&img_out, &dep_out};
    detail::resample_planes(in, out, valid, h, w, coord);
    r.image = img_out;
    r.depth = dep_out;
  };

  if (p.flip_h) {
    run_stage([&](int ox, int oy) { return detail::GeoSampler{static_cast<double>(w - 1 - ox), static_cast<double>(oy), true}; });
  }
  if (p.has_crop) {
    // resize the crop rect back to full resolution (pixel-center convention)
    double sx = p.crop_w / w, sy = p.crop_h / h;
    run_stage([&](int ox, int oy) {
      double x = p.crop_x + (ox + 0.5) * sx - 0.5;
      double y = p.crop_y + (oy + 0.5) * sy - 0.5;
      return detail::GeoSampler{x, y, true};
    });
  }
  if (p.has_affine) {
    run_stage([&](int ox, int oy) {
      double x = p.affine[0] * ox + p.affine[1] * oy + p.affine[2];
      double y = p.affine[3] * ox + p.affine[4] * oy + p.affine[5];
      bool inside = x >= 0.0 && x <= w - 1 && y >= 0.0 && y <= h - 1;
      return detail::GeoSampler{x, y, inside};
    });
  }

  r.validity = Tensor::zeros({1, 1, h, w});
  for (int i = 0; i < h * w; ++i) r.validity.data()[static_cast<size_t>(i)] = valid[static_cast<size_t>(i)];
  return r;
}

// Photometric chain on the image alone: gamma -> brightness -> jitter ->
// saturation -> gaussian noise, clamped to [0,1] at the end.
inline Tensor apply_photometric(const Tensor& image, const AugParams& p, Rng& rng) {
  if (image.rank() != 4) throw std::invalid_argument("apply_photometric: expects (N,C,H,W)");
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (p.is_identity_photometric()) return image.detached();

  Tensor out = image.clone();
  double* d = out.values->data();
  const long long plane = static_cast<long long>(h) * w;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      double* pp = d + (static_cast<long long>(b) * c + ch) * plane;
      double jit = p.jitter[static_cast<size_t>(ch % 3)];
      for (long long i = 0; i < plane; ++i) {
        double v = pp[i];
        if (p.gamma != 1.0) v = std::pow(std::max(v, 0.0), p.gamma);
        v = v * p.brightness + jit;
        pp[i] = v;
      }
    }
    if (p.saturation != 1.0 && c == 3) {
      double* r = d + (static_cast<long long>(b) * c) * plane;
      double* g = r + plane;
      double* bl = g + plane;
      for (long long i = 0; i < plane; ++i) {
        double luma = 0.299 * r[i] + 0.587 * g[i] + 0.114 * bl[i];
        r[i] = luma + p.saturation * (r[i] - luma);
        g[i] = luma + p.saturation * (g[i] - luma);
        bl[i] = luma + p.saturation * (bl[i] - luma);
      }
    }
  }
  if (p.noise_std > 0.0)
    for (double& v : *out.values) v += rng.normal(0.0, p.noise_std);
  for (double& v : *out.values) v = std::min(std::max(v, 0.0), 1.0);
  return out;
}

// Eq-style L1 consistency between the warped first-pass depth (ground truth,
// gradient-stopped) and the second-pass prediction, over valid pixels only.
inline Tensor augmentation_loss(const Tensor& depth_true, const Tensor& depth_out, const MaskMap& validity) {
  if (depth_true.shape != depth_out.shape) throw std::invalid_argument("augmentation_loss: shape mismatch");
  if (validity.shape != depth_true.shape) throw std::invalid_argument("augmentation_loss: validity shape mismatch");
  double n_valid = 0.0;
  for (double v : validity.data()) n_valid += v;
  if (n_valid == 0.0) throw std::invalid_argument("augmentation_loss: no valid pixels");
  Tensor masked = mul(abs_t(sub(depth_out, depth_true.detached())), validity.detached());
  return div(reduce_sum(masked), n_valid);
}

}  // namespace depthfit

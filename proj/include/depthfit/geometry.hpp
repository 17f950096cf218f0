#pragma once

#include <array>
#include <cmath>

#include "depthfit/ops.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

// ---------------------------------------------------------------------------
// plain value math (renderer, ground truth, tests)
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

struct Mat3 {
  // row-major
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  static Mat3 identity() { return Mat3{}; }
  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 transpose() const { return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}}; }
  Mat3 mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.m[static_cast<size_t>(i * 3 + j)] = m[static_cast<size_t>(i * 3)] * o.m[static_cast<size_t>(j)] +
                                              m[static_cast<size_t>(i * 3 + 1)] * o.m[static_cast<size_t>(3 + j)] +
                                              m[static_cast<size_t>(i * 3 + 2)] * o.m[static_cast<size_t>(6 + j)];
    return r;
  }
};

// Rodrigues. Near zero the trig ratios switch to their Taylor expansions,
// which are exact to machine precision below the threshold.
inline Mat3 axis_angle_to_matrix(const Vec3& r) {
  double t2 = r.dot(r);
  double A, B;
  if (t2 < 1e-8) {
    A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    double t = std::sqrt(t2);
    A = std::sin(t) / t;
    B = (1.0 - std::cos(t)) / t2;
  }
  Mat3 R;
  R.m = {1.0 + B * (-r.y * r.y - r.z * r.z),
         -A * r.z + B * r.x * r.y,
         A * r.y + B * r.x * r.z,
         A * r.z + B * r.x * r.y,
         1.0 + B * (-r.x * r.x - r.z * r.z),
         -A * r.x + B * r.y * r.z,
         -A * r.y + B * r.x * r.z,
         A * r.x + B * r.y * r.z,
         1.0 + B * (-r.x * r.x - r.y * r.y)};
  return R;
}

// Pinhole camera. Pixel centers sit at integer coordinates 0..width-1.
struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
      throw std::invalid_argument("intrinsics: principal point outside image");
  }

  // Intrinsics of the same camera at k-times the resolution.
  Intrinsics scaled(double k) const {
    Intrinsics s = *this;
    s.fx = fx * k;
    s.fy = fy * k;
    s.cx = cx * k + (k - 1.0) * 0.5;
    s.cy = cy * k + (k - 1.0) * 0.5;
    s.width = static_cast<int>(std::lround(width * k));
    s.height = static_cast<int>(std::lround(height * k));
    return s;
  }

  Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
};

inline Intrinsics default_intrinsics(int width, int height) {
  Intrinsics k;
  k.fx = k.fy = static_cast<double>(width);
  k.cx = (width - 1) * 0.5;
  k.cy = (height - 1) * 0.5;
  k.width = width;
  k.height = height;
  return k;
}

// 6-DoF egomotion: axis-angle rotation plus translation, mapping target-frame
// points into the source frame (X_s = R X_t + t).
struct Pose {
  Vec3 rotation;
  Vec3 translation;

  void validate() const {
    if (rotation.norm() >= 3.14159265358979323846)
      throw std::invalid_argument("pose: |rotation| must be below pi");
  }
  Mat3 matrix() const { return axis_angle_to_matrix(rotation); }
  static Pose identity() { return Pose{}; }

  // The inverse transform (source -> target).
  Pose inverse() const {
    Mat3 rt = matrix().transpose();
    Vec3 t = rt.apply(translation) * -1.0;
    return Pose{rotation * -1.0, t};
  }

  std::array<double, 6> flat() const {
    return {rotation.x, rotation.y, rotation.z, translation.x, translation.y, translation.z};
  }
  static Pose from_flat(const std::array<double, 6>& a) {
    return Pose{{a[0], a[1], a[2]}, {a[3], a[4], a[5]}};
  }
};

// ---------------------------------------------------------------------------
// differentiable pieces
// ---------------------------------------------------------------------------

// depth = 1 / (1/d_max + s * (1/d_min - 1/d_max)); maps [0,1] onto [d_max, d_min].
inline Tensor disparity_to_depth(const Tensor& sigmoid_out, double d_min, double d_max) {
  if (!(0.0 < d_min && d_min < d_max)) throw std::invalid_argument("disparity_to_depth: need 0 < d_min < d_max");
  double lo = 1.0 / d_max;
  double span = 1.0 / d_min - 1.0 / d_max;
  return div(1.0, add(mul(sigmoid_out, span), lo));
}

namespace detail {

// Rodrigues on the tape: rx, ry, rz are 1-element tensors; returns the nine
// rotation entries as 1-element tensors (row-major).
inline std::array<Tensor, 9> rotation_entries(const Tensor& rx, const Tensor& ry, const Tensor& rz) {
  Tensor t2 = add(add(mul(rx, rx), mul(ry, ry)), mul(rz, rz));
  Tensor A, B;
  if (value_of(t2) < 1e-8) {
    Tensor t4 = mul(t2, t2);
    A = add(sub(1.0, div(t2, 6.0)), div(t4, 120.0));
    B = add(sub(Tensor::scalar(0.5), div(t2, 24.0)), div(t4, 720.0));
  } else {
    Tensor t = sqrt_t(t2);
    A = div(sin_t(t), t);
    B = div(sub(1.0, cos_t(t)), t2);
  }
  Tensor one = Tensor::scalar(1.0);
  std::array<Tensor, 9> R;
  R[0] = add(one, mul(B, neg(add(mul(ry, ry), mul(rz, rz)))));
  R[1] = add(neg(mul(A, rz)), mul(B, mul(rx, ry)));
  R[2] = add(mul(A, ry), mul(B, mul(rx, rz)));
  R[3] = add(mul(A, rz), mul(B, mul(rx, ry)));
  R[4] = add(one, mul(B, neg(add(mul(rx, rx), mul(rz, rz)))));
  R[5] = add(neg(mul(A, rx)), mul(B, mul(ry, rz)));
  R[6] = add(neg(mul(A, ry)), mul(B, mul(rx, rz)));
  R[7] = add(mul(A, rx), mul(B, mul(ry, rz)));
  R[8] = add(one, mul(B, neg(add(mul(rx, rx), mul(ry, ry)))));
  return R;
}

inline Tensor pixel_coord_map(const Intrinsics& K, bool horizontal) {
  Tensor t = Tensor::zeros({1, 1, K.height, K.width});
  double* p = t.values->data();
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x)
      *p++ = horizontal ? (x - K.cx) / K.fx : (y - K.cy) / K.fy;
  return t;
}

inline Tensor pixel_index_map(int h, int w, bool horizontal) {
  Tensor t = Tensor::zeros({1, 1, h, w});
  double* p = t.values->data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) *p++ = horizontal ? x : y;
  return t;
}

}  // namespace detail

// For each target pixel: backproject at its depth, rigidly transform into the
// source frame, reproject. Returns absolute source-pixel coordinates
// (N,2,H,W). pose6 is (N,6): axis-angle then translation.
//
// Coordinates are formed as u' = u + fx * (px/pz - (u-cx)/fx), which cancels
// exactly at the identity pose, making identity-pose warps bit-exact. Points
// behind the camera (source z <= eps) are pushed far out of frame so sampling
// clamps them at the border.
inline Tensor projection_grid(const Tensor& depth, const Tensor& pose6, const Intrinsics& K) {
  if (depth.rank() != 4 || depth.dim(1) != 1) throw std::invalid_argument("projection_grid: depth must be (N,1,H,W)");
  if (pose6.rank() != 2 || pose6.dim(1) != 6) throw std::invalid_argument("projection_grid: pose must be (N,6)");
  if (depth.dim(0) != pose6.dim(0)) throw std::invalid_argument("projection_grid: batch mismatch");
  if (depth.dim(2) != K.height || depth.dim(3) != K.width)
    throw std::invalid_argument("projection_grid: depth resolution does not match intrinsics");
  const int n = depth.dim(0), h = depth.dim(2), w = depth.dim(3);
  const double eps = 1e-6;

  Tensor a_map = detail::pixel_coord_map(K, true);   // (u - cx)/fx
  Tensor b_map = detail::pixel_coord_map(K, false);  // (v - cy)/fy
  Tensor u_idx = detail::pixel_index_map(h, w, true);
  Tensor v_idx = detail::pixel_index_map(h, w, false);

  std::vector<Tensor> per_item;
  per_item.reserve(static_cast<size_t>(n));
  for (int b = 0; b < n; ++b) {
    Tensor p = (n == 1) ? pose6 : slice(pose6, 0, b, 1);  // (1,6)
    Tensor rx = slice(p, 1, 0, 1), ry = slice(p, 1, 1, 1), rz = slice(p, 1, 2, 1);
    Tensor tx = slice(p, 1, 3, 1), ty = slice(p, 1, 4, 1), tz = slice(p, 1, 5, 1);
    std::array<Tensor, 9> R = detail::rotation_entries(rx, ry, rz);

    Tensor d = (n == 1) ? depth : slice(depth, 0, b, 1);  // (1,1,H,W)
    // direction of the transformed point, normalized by depth: p/d = R*(a,b,1) + t/d
    Tensor mx = add(add(mul(a_map, R[0]), mul(b_map, R[1])), R[2]);
    Tensor my = add(add(mul(a_map, R[3]), mul(b_map, R[4])), R[5]);
    Tensor mz = add(add(mul(a_map, R[6]), mul(b_map, R[7])), R[8]);
    Tensor nx = add(mx, div(tx, d));
    Tensor ny = add(my, div(ty, d));
    Tensor nz = add(mz, div(tz, d));

    Tensor nz_safe = max2(nz, div(Tensor::scalar(eps), d));  // guards pz = nz*d <= eps
    Tensor u = add(u_idx, mul(sub(div(nx, nz_safe), a_map), K.fx));
    Tensor v = add(v_idx, mul(sub(div(ny, nz_safe), b_map), K.fy));

    // behind-camera pixels: push far outside (constant shift, no gradient)
    bool any_behind = false;
    const std::vector<double>& nzv = nz.data();
    const std::vector<double>& dv = d.data();
    for (int i = 0; i < h * w; ++i)
      if (nzv[static_cast<size_t>(i)] * dv[static_cast<size_t>(i)] <= eps) {
        any_behind = true;
        break;
      }
    if (any_behind) {
      Tensor shift = Tensor::zeros({1, 1, h, w});
      for (int i = 0; i < h * w; ++i)
        if (nzv[static_cast<size_t>(i)] * dv[static_cast<size_t>(i)] <= eps)
          shift.data()[static_cast<size_t>(i)] = 1e6;
      u = add(u, shift);
      v = add(v, shift);
    }
    per_item.push_back(concat(1, {u, v}));
  }
  return (n == 1) ? per_item[0] : concat(0, per_item);
}

inline Tensor pose_to_tensor(const Pose& p, int batch = 1) {
  auto f = p.flat();
  std::vector<double> data;
  for (int b = 0; b < batch; ++b) data.insert(data.end(), f.begin(), f.end());
  return Tensor::from({batch, 6}, std::move(data));
}

// View synthesis: sample the source image at the projected coordinates.
inline Tensor warp(const Tensor& source, const Tensor& depth, const Tensor& pose6, const Intrinsics& K) {
  if (source.rank() != 4) throw std::invalid_argument("warp: source must be (N,C,H,W)");
  if (source.dim(0) != depth.dim(0) || source.dim(2) != depth.dim(2) || source.dim(3) != depth.dim(3))
    throw std::invalid_argument("warp: source/depth shape mismatch");
  return grid_sample_bilinear(source, projection_grid(depth, pose6, K));
}

inline Tensor warp(const Tensor& source, const Tensor& depth, const Pose& pose, const Intrinsics& K) {
  return warp(source, depth, pose_to_tensor(pose, source.dim(0)), K);
}

}  // namespace depthfit

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "depthfit/geometry.hpp"
#include "depthfit/rng.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

enum class SceneLayout { FrontoPlane, SlantedPlane, TwoPlaneOcclusion };

inline std::string layout_name(SceneLayout l) {
  switch (l) {
    case SceneLayout::FrontoPlane: return "fronto_plane";
    case SceneLayout::SlantedPlane: return "slanted_plane";
    case SceneLayout::TwoPlaneOcclusion: return "two_plane_occlusion";
  }
  throw std::invalid_argument("unknown layout");
}

inline SceneLayout layout_from_name(const std::string& s) {
  if (s == "fronto_plane") return SceneLayout::FrontoPlane;
  if (s == "slanted_plane") return SceneLayout::SlantedPlane;
  if (s == "two_plane_occlusion") return SceneLayout::TwoPlaneOcclusion;
  throw std::invalid_argument("unknown layout name: " + s);
}

struct SceneSpec {
  SceneLayout layout = SceneLayout::FrontoPlane;
  double plane_depth = 5.0;           // fronto plane / background depth
  Vec3 slant_normal = {0, 0, 1};      // slanted layout only
  double slant_depth = 5.0;           // depth of the slanted plane at the optical axis
  double fg_depth = 3.0;              // foreground plane depth (two-plane layout)
  double fg_cx = 0.0, fg_cy = 0.0;    // foreground rectangle center, scene units
  double fg_w = 1.6, fg_h = 1.2;      // foreground rectangle extents
  std::uint64_t texture_seed = 0;
  Intrinsics intrinsics;

  void validate(double d_min = 0.1, double d_max = 100.0) const {
    intrinsics.validate();
    auto in_range = [&](double d) { return d >= d_min && d <= d_max; };
    if (!in_range(plane_depth) || !in_range(slant_depth) || !in_range(fg_depth))
      throw std::invalid_argument("scene: plane depths outside the depth range");
    if (layout == SceneLayout::TwoPlaneOcclusion && fg_depth >= plane_depth)
      throw std::invalid_argument("scene: foreground must be nearer than background");
    if (layout == SceneLayout::SlantedPlane && slant_normal.z < 0.5)
      throw std::invalid_argument("scene: slant normal too grazing");
  }
};

namespace detail {

// Band-limited texture: per channel a sum of random-phase sinusoids over the
// plane's (x, y) surface coordinates. Amplitudes sum to < 0.45, so values
// stay inside (0.05, 0.95) analytically and never clamp.
struct PlaneTexture {
  static constexpr int kComponents = 6;
  struct Wave {
    double amp, wx, wy, phase;
  };
  std::array<std::array<Wave, kComponents>, 3> waves;

  static PlaneTexture make(std::uint64_t seed, double max_omega) {
    PlaneTexture t;
    for (int c = 0; c < 3; ++c) {
      Rng rng(mix_seed(seed, 0x746578ULL + static_cast<std::uint64_t>(c)));
      double total = 0.0;
      std::array<double, kComponents> raw{};
      for (int k = 0; k < kComponents; ++k) {
        raw[static_cast<size_t>(k)] = rng.uniform(0.4, 1.0) / (1.0 + 0.6 * k);
        total += raw[static_cast<size_t>(k)];
      }
      for (int k = 0; k < kComponents; ++k) {
        Wave& w = t.waves[static_cast<size_t>(c)][static_cast<size_t>(k)];
        w.amp = 0.44 * raw[static_cast<size_t>(k)] / total;
        double omega = rng.uniform(0.25, 1.0) * max_omega * (0.4 + 0.6 * (k + 1) / kComponents);
        double dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        w.wx = omega * std::cos(dir);
        w.wy = omega * std::sin(dir);
        w.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      }
    }
    return t;
  }

  double value(int chan, double a, double b) const {
    double v = 0.5;
    for (const Wave& w : waves[static_cast<size_t>(chan)]) v += w.amp * std::sin(w.wx * a + w.wy * b + w.phase);
    return v;
  }
};

struct ScenePlane {
  Vec3 normal;      // target-frame plane: normal . X = offset
  double offset;
  bool bounded = false;
  double cx = 0, cy = 0, half_w = 0, half_h = 0;  // rectangle on the plane (x/y extents)
  PlaneTexture texture;

  bool contains(const Vec3& p) const {
    if (!bounded) return true;
    return std::fabs(p.x - cx) <= half_w && std::fabs(p.y - cy) <= half_h;
  }
};

}  // namespace detail

// Analytic scene: planes with procedural textures, exact to evaluate from any
// camera. Every ray hits the unbounded base plane, so frames have no holes.
class AnalyticScene {
 public:
  explicit AnalyticScene(const SceneSpec& spec) : spec_(spec) {
    spec.validate();
    const double extent = spec.plane_depth * spec.intrinsics.width / spec.intrinsics.fx;
    const double max_omega = 2.0 * 3.14159265358979323846 * 2.5 / extent;  // <= ~2.5 cycles across
    switch (spec.layout) {
      case SceneLayout::FrontoPlane: {
        planes_.push_back({{0, 0, 1}, spec.plane_depth, false, 0, 0, 0, 0,
                           detail::PlaneTexture::make(spec.texture_seed, max_omega)});
        break;
      }
      case SceneLayout::SlantedPlane: {
        Vec3 n = spec.slant_normal;
        double norm = n.norm();
        n = n * (1.0 / norm);
        planes_.push_back({n, n.dot({0, 0, spec.slant_depth}), false, 0, 0, 0, 0,
                           detail::PlaneTexture::make(spec.texture_seed, max_omega)});
        break;
      }
      case SceneLayout::TwoPlaneOcclusion: {
        planes_.push_back({{0, 0, 1}, spec.plane_depth, false, 0, 0, 0, 0,
                           detail::PlaneTexture::make(spec.texture_seed, max_omega)});
        planes_.push_back({{0, 0, 1}, spec.fg_depth, true, spec.fg_cx, spec.fg_cy, spec.fg_w * 0.5,
                           spec.fg_h * 0.5,
                           detail::PlaneTexture::make(mix_seed(spec.texture_seed, 0xf6ULL), max_omega * 1.3)});
        break;
      }
    }
  }

  const SceneSpec& spec() const { return spec_; }

  struct Hit {
    Vec3 point;   // target-frame coordinates
    double s;     // camera-frame depth (z along the optical axis)
    int plane;    // index into planes
    bool ok;
  };

  // First intersection of the ray through real-valued pixel (u, v) of the
  // camera at `cam` (target -> camera transform).
  Hit trace(const Pose& cam, const Intrinsics& K, double u, double v) const {
    Mat3 R = cam.matrix();
    Mat3 Rt = R.transpose();
    Vec3 center = Rt.apply(cam.translation) * -1.0;  // camera origin in target coords
    Vec3 dir = Rt.apply(K.ray(u, v));                // dir.z in camera frame is 1
    Hit best{{}, 1e300, -1, false};
    for (size_t i = 0; i < planes_.size(); ++i) {
      const detail::ScenePlane& pl = planes_[i];
      double denom = pl.normal.dot(dir);
      if (std::fabs(denom) < 1e-12) continue;
      double s = (pl.offset - pl.normal.dot(center)) / denom;
      if (s <= 1e-9 || s >= best.s) continue;
      Vec3 p = center + dir * s;
      if (!pl.contains(p)) continue;
      best = Hit{p, s, static_cast<int>(i), true};
    }
    return best;
  }

  // Does the target-frame point project inside the camera's image?
  bool in_frame(const Vec3& point, const Pose& cam, const Intrinsics& K) const {
    Mat3 R = cam.matrix();
    Vec3 in_cam = R.apply(point) + cam.translation;
    if (in_cam.z <= 1e-6) return false;
    double u = K.fx * in_cam.x / in_cam.z + K.cx;
    double v = K.fy * in_cam.y / in_cam.z + K.cy;
    const double pad = 1e-9;  // absorbs reprojection rounding at the border
    return u >= -pad && u <= K.width - 1 + pad && v >= -pad && v <= K.height - 1 + pad;
  }

  // Can bilinear warping explain the target-frame point (known to lie on
  // `plane`) from the camera at `cam`? Requires the projection inside the
  // image, the point unoccluded there, and all four bilinear taps on the same
  // plane (interpolating across an occlusion silhouette mixes surfaces).
  bool visible(const Vec3& point, int plane, const Pose& cam, const Intrinsics& K) const {
    if (!in_frame(point, cam, K)) return false;
    Mat3 R = cam.matrix();
    Vec3 in_cam = R.apply(point) + cam.translation;
    double u = K.fx * in_cam.x / in_cam.z + K.cx;
    double v = K.fy * in_cam.y / in_cam.z + K.cy;
    u = std::min(std::max(u, 0.0), static_cast<double>(K.width - 1));
    v = std::min(std::max(v, 0.0), static_cast<double>(K.height - 1));
    Hit h = trace(cam, K, u, v);
    if (!h.ok || h.plane != plane) return false;
    if (std::fabs(h.s - in_cam.z) > 1e-6 * std::max(1.0, in_cam.z)) return false;
    if (planes_.size() > 1) {
      int x0 = std::min(static_cast<int>(std::floor(u)), K.width - 1);
      int y0 = std::min(static_cast<int>(std::floor(v)), K.height - 1);
      int x1 = std::min(x0 + 1, K.width - 1);
      int y1 = std::min(y0 + 1, K.height - 1);
      for (int yy : {y0, y1})
        for (int xx : {x0, x1}) {
          Hit tap = trace(cam, K, xx, yy);
          if (!tap.ok || tap.plane != plane) return false;
        }
    }
    return true;
  }

  double texture_value(int plane, int chan, const Vec3& p) const {
    return planes_[static_cast<size_t>(plane)].texture.value(chan, p.x, p.y);
  }

  // Renders the camera view; image (1,3,H,W), depth (1,1,H,W) both exact.
  void render(const Pose& cam, const Intrinsics& K, Tensor* image, Tensor* depth) const {
    const int h = K.height, w = K.width;
    Tensor img = Tensor::zeros({1, 3, h, w});
    Tensor dep = Tensor::zeros({1, 1, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        Hit hit = trace(cam, K, x, y);
        if (!hit.ok) throw std::runtime_error("render: ray escaped the scene");
        dep.data()[static_cast<size_t>(y * w + x)] = hit.s;
        for (int c = 0; c < 3; ++c)
          img.data()[static_cast<size_t>(c * h * w + y * w + x)] = texture_value(hit.plane, c, hit.point);
      }
    if (image) *image = img;
    if (depth) *depth = dep;
  }

 private:
  SceneSpec spec_;
  std::vector<detail::ScenePlane> planes_;
};

// (source1, target, source2) with exact ground truth.
struct Triplet {
  Tensor source1, target, source2;  // (1,3,H,W)
  Tensor gt_depth;                  // (1,1,H,W), target frame; undefined for external data
  Pose pose1, pose2;                // target -> source transforms
  Intrinsics intrinsics;
  Tensor valid1, valid2;            // {0,1}: target pixels the warp model can explain per source
  bool has_gt = false;
};

// Target texture/depth render (the gen_scene entry point).
inline std::pair<Tensor, Tensor> gen_scene(const SceneSpec& spec) {
  AnalyticScene scene(spec);
  Tensor img, dep;
  scene.render(Pose::identity(), spec.intrinsics, &img, &dep);
  return {img, dep};
}

// Renders a full triplet. Each frame is an exact render of the shared
// analytic surface, so warping sources with the ground-truth depth and pose
// reproduces the target up to interpolation error. Disocclusions are recorded
// in the per-source validity masks.
inline Triplet render_triplet(const AnalyticScene& scene, const Pose& pose1, const Pose& pose2) {
  const Intrinsics& K = scene.spec().intrinsics;
  pose1.validate();
  pose2.validate();
  Triplet t;
  t.intrinsics = K;
  t.pose1 = pose1;
  t.pose2 = pose2;
  t.has_gt = true;
  scene.render(Pose::identity(), K, &t.target, &t.gt_depth);
  scene.render(pose1, K, &t.source1, nullptr);
  scene.render(pose2, K, &t.source2, nullptr);

  const int h = K.height, w = K.width;
  t.valid1 = Tensor::zeros({1, 1, h, w});
  t.valid2 = Tensor::zeros({1, 1, h, w});
  long long in1 = 0, in2 = 0, either = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      AnalyticScene::Hit hit = scene.trace(Pose::identity(), K, x, y);
      bool f1 = scene.in_frame(hit.point, pose1, K);
      bool f2 = scene.in_frame(hit.point, pose2, K);
      in1 += f1;
      in2 += f2;
      either += f1 || f2;
      bool v1 = f1 && scene.visible(hit.point, hit.plane, pose1, K);
      bool v2 = f2 && scene.visible(hit.point, hit.plane, pose2, K);
      t.valid1.data()[static_cast<size_t>(y * w + x)] = v1 ? 1.0 : 0.0;
      t.valid2.data()[static_cast<size_t>(y * w + x)] = v2 ? 1.0 : 0.0;
    }
  // The minimum-reprojection loss needs each pixel explained by at least one
  // source; per-source coverage may dip slightly below that near borders.
  const long long total = static_cast<long long>(h) * w;
  if (either < 0.95 * total || in1 < 0.85 * total || in2 < 0.85 * total)
    throw std::runtime_error("render_triplet: motion pushes too many pixels out of frame");
  return t;
}

// ---------------------------------------------------------------------------
// random scene/motion sampling for dataset generation
// ---------------------------------------------------------------------------

inline SceneSpec sample_scene_spec(Rng& rng, int width, int height) {
  SceneSpec s;
  s.intrinsics = default_intrinsics(width, height);
  int which = rng.uniform_int(3);
  s.layout = which == 0 ? SceneLayout::FrontoPlane
                        : (which == 1 ? SceneLayout::SlantedPlane : SceneLayout::TwoPlaneOcclusion);
  s.plane_depth = rng.uniform(4.5, 8.0);
  s.slant_depth = rng.uniform(4.0, 6.5);
  double tilt = rng.uniform(0.1, 0.35);
  double az = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  s.slant_normal = {std::sin(tilt) * std::cos(az), std::sin(tilt) * std::sin(az), std::cos(tilt)};
  s.fg_depth = rng.uniform(2.6, 3.8);
  s.fg_cx = rng.uniform(-0.8, 0.8);
  s.fg_cy = rng.uniform(-0.6, 0.6);
  s.fg_w = rng.uniform(1.2, 2.4);
  s.fg_h = rng.uniform(1.0, 2.0);
  s.texture_seed = rng.next_u64();
  return s;
}

// Lateral dominant motion with small rotations; the two sources move to
// opposite sides of the target, like neighboring frames of a travelling
// camera.
inline std::pair<Pose, Pose> sample_motion(Rng& rng) {
  auto one = [&](double sign) {
    Pose p;
    p.translation.x = sign * rng.uniform(0.2, 0.6);
    p.translation.y = rng.uniform(-0.05, 0.05);
    p.translation.z = rng.uniform(-0.05, 0.05);
    p.rotation = {rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
    return p;
  };
  double flip = rng.bernoulli(0.5) ? 1.0 : -1.0;
  return {one(flip), one(-flip)};
}

// Deterministic per-index triplet generation (the dataset builder).
inline Triplet make_triplet(std::uint64_t seed, int index, int width, int height, SceneSpec* spec_out = nullptr,
                            int max_retries = 32) {
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index) * 1000003ULL + static_cast<std::uint64_t>(attempt)));
    SceneSpec spec = sample_scene_spec(rng, width, height);
    AnalyticScene scene(spec);
    auto [p1, p2] = sample_motion(rng);
    try {
      Triplet t = render_triplet(scene, p1, p2);
      if (spec_out) *spec_out = spec;
      return t;
    } catch (const std::runtime_error&) {
      continue;  // out-of-frame motion; resample
    }
  }
  throw std::runtime_error("make_triplet: could not sample an in-frame motion");
}

}  // namespace depthfit

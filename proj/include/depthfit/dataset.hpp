#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthfit/image_io.hpp"
#include "depthfit/synth.hpp"

namespace depthfit {

// On-disk layout per scene directory:
//   scene_%04d/{s1,t,s2}.ppm            base resolution frames
//   scene_%04d/{s1,t,s2}_2x.ppm         frames re-rendered at the hires factor
//   scene_%04d/depth_t.pfm, depth_t_2x.pfm
//   scene_%04d/meta.json                intrinsics, poses (flat arrays), scene spec
// plus a top-level manifest.json naming the train/val split.

inline nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  return nlohmann::json{{"layout", layout_name(s.layout)},
                        {"plane_depth", s.plane_depth},
                        {"slant_normal", {s.slant_normal.x, s.slant_normal.y, s.slant_normal.z}},
                        {"slant_depth", s.slant_depth},
                        {"fg_depth", s.fg_depth},
                        {"fg_center", {s.fg_cx, s.fg_cy}},
                        {"fg_size", {s.fg_w, s.fg_h}},
                        {"texture_seed", s.texture_seed}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j, const Intrinsics& k) {
  SceneSpec s;
  s.layout = layout_from_name(j.at("layout").get<std::string>());
  s.plane_depth = j.at("plane_depth").get<double>();
  auto n = j.at("slant_normal").get<std::vector<double>>();
  s.slant_normal = {n.at(0), n.at(1), n.at(2)};
  s.slant_depth = j.at("slant_depth").get<double>();
  s.fg_depth = j.at("fg_depth").get<double>();
  auto c = j.at("fg_center").get<std::vector<double>>();
  s.fg_cx = c.at(0);
  s.fg_cy = c.at(1);
  auto sz = j.at("fg_size").get<std::vector<double>>();
  s.fg_w = sz.at(0);
  s.fg_h = sz.at(1);
  s.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  s.intrinsics = k;
  return s;
}

inline nlohmann::json intrinsics_to_json(const Intrinsics& k) {
  return nlohmann::json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                        {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline Intrinsics intrinsics_from_json(const nlohmann::json& j) {
  Intrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.validate();
  return k;
}

struct DatasetManifest {
  std::uint64_t seed = 0;
  int width = 0, height = 0;
  int hires_factor = 2;
  std::vector<std::string> train_scenes;
  std::vector<std::string> val_scenes;
};

inline std::string scene_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

// Generates `count` training triplets plus `val_count` held-out ones and
// writes the full directory tree. Deterministic in (seed, index).
inline DatasetManifest write_dataset(const std::string& dir, std::uint64_t seed, int count, int val_count,
                                     int width, int height, int hires_factor = 2) {
  if (count < 1 || val_count < 0) throw std::invalid_argument("dataset: need at least one training scene");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  DatasetManifest man;
  man.seed = seed;
  man.width = width;
  man.height = height;
  man.hires_factor = hires_factor;

  for (int i = 0; i < count + val_count; ++i) {
    SceneSpec spec;
    Triplet t = make_triplet(seed, i, width, height, &spec);
    std::string scene_name = scene_dir_name(i);
    fs::path sdir = fs::path(dir) / scene_name;
    fs::create_directories(sdir);
    write_ppm((sdir / "s1.ppm").string(), t.source1);
    write_ppm((sdir / "t.ppm").string(), t.target);
    write_ppm((sdir / "s2.ppm").string(), t.source2);
    write_pfm((sdir / "depth_t.pfm").string(), t.gt_depth);

    // re-render the same scene at the higher resolution for phase 2
    SceneSpec hi = spec;
    hi.intrinsics = spec.intrinsics.scaled(hires_factor);
    AnalyticScene scene_hi(hi);
    Tensor img, dep;
    scene_hi.render(t.pose1, hi.intrinsics, &img, nullptr);
    write_ppm((sdir / "s1_2x.ppm").string(), img);
    scene_hi.render(Pose::identity(), hi.intrinsics, &img, &dep);
    write_ppm((sdir / "t_2x.ppm").string(), img);
    write_pfm((sdir / "depth_t_2x.pfm").string(), dep);
    scene_hi.render(t.pose2, hi.intrinsics, &img, nullptr);
    write_ppm((sdir / "s2_2x.ppm").string(), img);

    double vf1 = 0.0, vf2 = 0.0;
    for (double v : t.valid1.data()) vf1 += v;
    for (double v : t.valid2.data()) vf2 += v;
    nlohmann::json meta{{"format_version", 1},
                        {"intrinsics", intrinsics_to_json(t.intrinsics)},
                        {"pose_1", t.pose1.flat()},
                        {"pose_2", t.pose2.flat()},
                        {"scene", scene_spec_to_json(spec)},
                        {"valid_fraction", {vf1 / t.valid1.size(), vf2 / t.valid2.size()}}};
    std::ofstream mf(sdir / "meta.json");
    mf << meta.dump(2) << "\n";

    if (i < count)
      man.train_scenes.push_back(scene_name);
    else
      man.val_scenes.push_back(scene_name);
  }

  nlohmann::json mj{{"format_version", 1},
                    {"seed", seed},
                    {"resolution", {height, width}},
                    {"hires_factor", hires_factor},
                    {"train_scenes", man.train_scenes},
                    {"val_scenes", man.val_scenes}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << mj.dump(2) << "\n";
  return man;
}

class Dataset {
 public:
  explicit Dataset(std::string dir) : dir_(std::move(dir)) {
    std::ifstream f(std::filesystem::path(dir_) / "manifest.json");
    if (!f) throw std::runtime_error("dataset: missing manifest.json in " + dir_);
    nlohmann::json j = nlohmann::json::parse(f);
    if (j.at("format_version").get<int>() != 1) throw std::runtime_error("dataset: unsupported manifest version");
    man_.seed = j.at("seed").get<std::uint64_t>();
    auto res = j.at("resolution").get<std::vector<int>>();
    man_.height = res.at(0);
    man_.width = res.at(1);
    man_.hires_factor = j.at("hires_factor").get<int>();
    man_.train_scenes = j.at("train_scenes").get<std::vector<std::string>>();
    man_.val_scenes = j.at("val_scenes").get<std::vector<std::string>>();
    if (man_.train_scenes.empty()) throw std::runtime_error("dataset: manifest lists no training scenes");
  }

  const DatasetManifest& manifest() const { return man_; }
  const std::string& dir() const { return dir_; }

  // hires = phase-2 resolution (the stored factor). GT depth loads only on
  // request; training never touches it.
  Triplet load(const std::string& scene_name, bool hires, bool with_gt) const {
    namespace fs = std::filesystem;
    fs::path sdir = fs::path(dir_) / scene_name;
    std::string suffix = hires ? "_2x" : "";
    Triplet t;
    t.source1 = read_ppm((sdir / ("s1" + suffix + ".ppm")).string());
    t.target = read_ppm((sdir / ("t" + suffix + ".ppm")).string());
    t.source2 = read_ppm((sdir / ("s2" + suffix + ".ppm")).string());

    std::ifstream mf(sdir / "meta.json");
    if (!mf) throw std::runtime_error("dataset: missing meta.json in " + sdir.string());
    nlohmann::json meta = nlohmann::json::parse(mf);
    Intrinsics base = intrinsics_from_json(meta.at("intrinsics"));
    t.intrinsics = hires ? base.scaled(man_.hires_factor) : base;
    auto p1 = meta.at("pose_1").get<std::array<double, 6>>();
    auto p2 = meta.at("pose_2").get<std::array<double, 6>>();
    t.pose1 = Pose::from_flat(p1);
    t.pose2 = Pose::from_flat(p2);
    if (with_gt) {
      t.gt_depth = read_pfm((sdir / ("depth_t" + suffix + ".pfm")).string());
      t.has_gt = true;
    }
    return t;
  }

  SceneSpec scene_spec(const std::string& scene_name, bool hires) const {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir_) / scene_name / "meta.json");
    if (!mf) throw std::runtime_error("dataset: missing meta.json for " + scene_name);
    nlohmann::json meta = nlohmann::json::parse(mf);
    Intrinsics base = intrinsics_from_json(meta.at("intrinsics"));
    return scene_spec_from_json(meta.at("scene"), hires ? base.scaled(man_.hires_factor) : base);
  }

 private:
  std::string dir_;
  DatasetManifest man_;
};

}  // namespace depthfit

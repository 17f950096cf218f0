#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthfit/config.hpp"
#include "depthfit/dataset.hpp"
#include "depthfit/gradcheck_suite.hpp"
#include "depthfit/image_io.hpp"
#include "depthfit/metrics.hpp"
#include "depthfit/trainer.hpp"

namespace depthfit::cli {

// exit codes: 0 success, 1 validation error, 2 runtime failure, 3 check failure
constexpr int kOk = 0;
constexpr int kValidationError = 1;
constexpr int kRuntimeError = 2;
constexpr int kCheckFailure = 3;

struct SynthOptions {
  std::string out_dir;
  int count = 200;
  int val_count = 20;
  std::uint64_t seed = 0;
  int resolution = 64;
  int hires_factor = 2;
};

struct TrainOptions {
  std::string config_path;  // empty = defaults
  std::string data_dir;
  std::string out_dir;
  std::string resume_path;  // empty = fresh run
  std::vector<std::string> overrides;
};

struct EvalOptions {
  std::string ckpt_path;
  std::string data_dir;
  std::string split = "val";  // val | train | all
  bool median_scaling = true;
  double cap = 80.0;
  bool self_check = false;
  bool eigen_crop = false;
  std::string resolution = "auto";  // auto | base | hires
};

struct InferOptions {
  std::string ckpt_path;
  std::string image_path;
  std::string out_dir;
};

struct GradcheckOptions {
  std::string filter;  // substring match on check names
};

namespace detail {

template <class Fn>
int guarded(std::ostream& err, Fn fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

struct LoadedModel {
  TrainConfig config;
  nlohmann::json config_json;
  std::unique_ptr<DepthPoseModel> model;
  long long step = 0;
};

inline LoadedModel load_model(const std::string& ckpt_path) {
  std::vector<CheckpointEntry> entries = read_checkpoint(ckpt_path);
  const CheckpointEntry* cfg_entry = nullptr;
  const CheckpointEntry* step_entry = nullptr;
  for (const CheckpointEntry& e : entries) {
    if (e.name == "meta.config") cfg_entry = &e;
    if (e.name == "trainer.step") step_entry = &e;
  }
  if (!cfg_entry) throw std::runtime_error("checkpoint lacks the embedded configuration");
  LoadedModel lm;
  lm.config_json = nlohmann::json::parse(std::string(cfg_entry->u8.begin(), cfg_entry->u8.end()));
  lm.config = config_from_json(lm.config_json);
  lm.model = std::make_unique<DepthPoseModel>(lm.config.model, lm.config.seed);
  lm.model->import_params(entries);
  if (step_entry) lm.step = static_cast<long long>(step_entry->f64.at(0));
  return lm;
}

inline Tensor predict_depth(DepthPoseModel& model, const Tensor& image, const NetworkConfig& cfg) {
  Tape tape;
  Tensor disp = model.bind(tape).depth_forward(image)[0];
  return disparity_to_depth(disp, cfg.d_min, cfg.d_max).detached();
}

inline void write_previews(DepthPoseModel& model, const NetworkConfig& net_cfg, const Dataset& data, bool hires,
                           const std::string& out_dir, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::path pdir = fs::path(out_dir) / "previews";
  fs::create_directories(pdir);
  const auto& val = data.manifest().val_scenes.empty() ? data.manifest().train_scenes : data.manifest().val_scenes;
  int n = std::min<int>(4, static_cast<int>(val.size()));
  for (int i = 0; i < n; ++i) {
    Triplet t = data.load(val[static_cast<size_t>(i)], hires, false);
    Tensor depth = predict_depth(model, t.target, net_cfg);
    std::string name = "val_" + std::to_string(i) + "_depth.ppm";
    write_ppm((pdir / name).string(), false_color(depth));
  }
  out << "wrote " << n << " preview images to " << pdir.string() << "\n";
}

}  // namespace detail

inline int run_synth(const SynthOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() {
    if (opt.out_dir.empty()) throw std::invalid_argument("synth: --out is required");
    if (opt.count < 1) throw std::invalid_argument("synth: --count must be >= 1");
    if (opt.resolution % 16 != 0) throw std::invalid_argument("synth: resolution must be a multiple of 16");
    DatasetManifest man = write_dataset(opt.out_dir, opt.seed, opt.count, opt.val_count, opt.resolution,
                                        opt.resolution, opt.hires_factor);
    out << "wrote " << man.train_scenes.size() << " training and " << man.val_scenes.size()
        << " held-out triplets to " << opt.out_dir << "\n";
    return kOk;
  });
}

inline int run_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() {
    if (opt.data_dir.empty() || opt.out_dir.empty())
      throw std::invalid_argument("train: --data and --out are required");
    nlohmann::json merged;
    TrainConfig cfg = load_train_config(opt.config_path, opt.overrides, &merged);
    Dataset data(opt.data_dir);
    Trainer trainer(cfg, data);
    if (!opt.resume_path.empty()) {
      trainer.resume_from(opt.resume_path, merged);
      out << "resumed from " << opt.resume_path << " at step " << trainer.step() << "\n";
    }
    if (cfg.loss.alpha_a == 0.0 || !cfg.model.aug_loss_enabled)
      out << "augmentation pass disabled (alpha_a = 0 or model.aug_loss = false)\n";
    std::vector<StepReport> reports = trainer.run(opt.out_dir, merged, &out);
    if (!reports.empty()) {
      out << "finished " << trainer.step() << " steps; first loss " << reports.front().total << ", last loss "
          << reports.back().total << "\n";
    }
    bool hires = cfg.phase2.steps > 0;
    detail::write_previews(trainer.model(), cfg.model, data, hires, opt.out_dir, out);
    return kOk;
  });
}

inline int run_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() {
    if (opt.data_dir.empty()) throw std::invalid_argument("eval: --data is required");
    Dataset data(opt.data_dir);
    if (opt.eigen_crop) err << "warning: --eigen-crop is accepted but ignored for synthetic data\n";

    if (opt.self_check) {
      // ground-truth warp self-consistency over the generated set; the bound
      // allows for the 8-bit quantization floor of on-disk images
      const double threshold = 4e-3;
      double worst = 0.0;
      std::vector<std::string> all = data.manifest().train_scenes;
      all.insert(all.end(), data.manifest().val_scenes.begin(), data.manifest().val_scenes.end());
      for (const std::string& name : all) {
        Triplet t = data.load(name, false, true);
        SceneSpec spec = data.scene_spec(name, false);
        AnalyticScene scene(spec);
        const Intrinsics& K = t.intrinsics;
        Tensor valid1 = Tensor::zeros({1, 1, K.height, K.width});
        Tensor valid2 = Tensor::zeros({1, 1, K.height, K.width});
        for (int y = 0; y < K.height; ++y)
          for (int x = 0; x < K.width; ++x) {
            AnalyticScene::Hit hit = scene.trace(Pose::identity(), K, x, y);
            valid1.data()[static_cast<size_t>(y * K.width + x)] =
                scene.visible(hit.point, hit.plane, t.pose1, K) ? 1.0 : 0.0;
            valid2.data()[static_cast<size_t>(y * K.width + x)] =
                scene.visible(hit.point, hit.plane, t.pose2, K) ? 1.0 : 0.0;
          }
        auto masked_err = [&](const Tensor& warped, const Tensor& valid) {
          double acc = 0.0;
          long long n = 0;
          for (int y = 4; y < K.height - 4; ++y)
            for (int x = 4; x < K.width - 4; ++x) {
              if (valid.data()[static_cast<size_t>(y * K.width + x)] == 0.0) continue;
              for (int c = 0; c < 3; ++c) {
                double a = warped.data()[static_cast<size_t>((c * K.height + y) * K.width + x)];
                double b = t.target.data()[static_cast<size_t>((c * K.height + y) * K.width + x)];
                acc += std::fabs(a - b);
                ++n;
              }
            }
          return n > 0 ? acc / static_cast<double>(n) : 0.0;
        };
        double e1 = masked_err(warp(t.source1, t.gt_depth, t.pose1, K), valid1);
        double e2 = masked_err(warp(t.source2, t.gt_depth, t.pose2, K), valid2);
        worst = std::max({worst, e1, e2});
      }
      out << "self-check: worst mean warp error " << worst << " (threshold " << threshold << ") over " << all.size()
          << " scenes\n";
      if (worst >= threshold) {
        err << "self-check FAILED\n";
        return kCheckFailure;
      }
      out << "self-check PASSED\n";
      return kOk;
    }

    if (opt.ckpt_path.empty()) throw std::invalid_argument("eval: --ckpt is required (or pass --self-check)");
    detail::LoadedModel lm = detail::load_model(opt.ckpt_path);
    bool hires = false;
    if (opt.resolution == "hires")
      hires = true;
    else if (opt.resolution == "auto")
      hires = lm.step > lm.config.phase1.steps && lm.config.phase2.steps > 0;
    else if (opt.resolution != "base")
      throw std::invalid_argument("eval: --resolution must be auto, base or hires");

    std::vector<std::string> scenes;
    if (opt.split == "val")
      scenes = data.manifest().val_scenes;
    else if (opt.split == "train")
      scenes = data.manifest().train_scenes;
    else if (opt.split == "all") {
      scenes = data.manifest().train_scenes;
      scenes.insert(scenes.end(), data.manifest().val_scenes.begin(), data.manifest().val_scenes.end());
    } else {
      throw std::invalid_argument("eval: --split must be val, train or all");
    }
    if (scenes.empty()) throw std::invalid_argument("eval: the requested split is empty");

    std::vector<MetricReport> reports;
    for (const std::string& name : scenes) {
      Triplet t = data.load(name, hires, true);
      if (!t.has_gt) throw std::runtime_error("eval: scene lacks ground truth: " + name);
      Tensor pred = detail::predict_depth(*lm.model, t.target, lm.config.model);
      Tensor ones = Tensor::full(pred.shape, 1.0);
      double factor = 1.0;
      if (opt.median_scaling) {
        MedianScaled ms = median_scale(pred, t.gt_depth, ones);
        pred = ms.pred;
        factor = ms.factor;
      }
      MetricReport r = compute_metrics(pred, t.gt_depth, opt.cap);
      r.scale_factor = factor;
      reports.push_back(r);
    }
    MetricReport pooled = aggregate(reports);
    out << metrics_table(pooled);
    nlohmann::json j{{"format_version", 1},
                     {"split", opt.split},
                     {"scenes", scenes.size()},
                     {"cap", opt.cap},
                     {"median_scaling", opt.median_scaling},
                     {"resolution", hires ? "hires" : "base"},
                     {"abs_rel", pooled.abs_rel},
                     {"sq_rel", pooled.sq_rel},
                     {"rmse", pooled.rmse},
                     {"rmse_log", pooled.rmse_log},
                     {"delta1", pooled.delta1},
                     {"delta2", pooled.delta2},
                     {"delta3", pooled.delta3},
                     {"n_pixels", pooled.n_pixels}};
    out << j.dump(2) << "\n";
    return kOk;
  });
}

inline int run_infer(const InferOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() {
    if (opt.ckpt_path.empty() || opt.image_path.empty() || opt.out_dir.empty())
      throw std::invalid_argument("infer: --ckpt, --image and --out are required");
    detail::LoadedModel lm = detail::load_model(opt.ckpt_path);
    Tensor image = read_ppm(opt.image_path);
    if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0)
      throw std::invalid_argument("infer: image resolution " + shape_str(image.shape) +
                                  " is incompatible with the model (dimensions must be multiples of 16)");
    Tensor depth = detail::predict_depth(*lm.model, image, lm.config.model);
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    std::string pfm_path = (fs::path(opt.out_dir) / "depth.pfm").string();
    std::string ppm_path = (fs::path(opt.out_dir) / "depth_color.ppm").string();
    write_pfm(pfm_path, depth);
    write_ppm(ppm_path, false_color(depth));
    out << "wrote " << pfm_path << " and " << ppm_path << "\n";
    return kOk;
  });
}

inline int run_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() {
    bool previous = debug_checks();
    debug_checks() = true;
    int failures = 0, ran = 0;
    for (const GradCheckCase& c : standard_gradchecks()) {
      if (!opt.filter.empty() && c.name.find(opt.filter) == std::string::npos) continue;
      GradCheckResult r = c.run();
      ++ran;
      out << (r.passed ? "PASS " : "FAIL ") << c.name << "  max rel err " << r.max_rel_err << "  (tolerance "
          << c.tolerance << ")\n";
      failures += r.passed ? 0 : 1;
    }
    debug_checks() = previous;
    if (ran == 0) {
      err << "gradcheck: no checks match filter '" << opt.filter << "'\n";
      return kValidationError;
    }
    out << ran - failures << "/" << ran << " checks passed\n";
    return failures == 0 ? kOk : kCheckFailure;
  });
}

}  // namespace depthfit::cli

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthfit/adam.hpp"
#include "depthfit/augment.hpp"
#include "depthfit/config.hpp"
#include "depthfit/dataset.hpp"
#include "depthfit/geometry.hpp"
#include "depthfit/losses.hpp"
#include "depthfit/networks.hpp"

namespace depthfit {

struct StepReport {
  long long step = 0;
  int phase = 1;
  double total = 0.0, photometric = 0.0, smooth = 0.0, mask_reg = 0.0, aug = 0.0;
  double mean_lambda = 0.0;
  double mask_reg_literal = 0.0;
  double grad_norm = 0.0;
  bool aug_pass_ran = false;
  bool skipped = false;

  nlohmann::json to_json() const {
    return nlohmann::json{{"step", step},
                          {"phase", phase},
                          {"total", total},
                          {"photometric", photometric},
                          {"smooth", smooth},
                          {"mask_reg", mask_reg},
                          {"mask_reg_literal", mask_reg_literal},
                          {"aug", aug},
                          {"mean_lambda", mean_lambda},
                          {"grad_norm", grad_norm},
                          {"aug_pass_ran", aug_pass_ran},
                          {"skipped", skipped}};
  }
};

namespace detail {

inline Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.size() == 1) return items[0];
  return concat(0, items);
}

}  // namespace detail

// Two-forward-pass training step plus the progressive two-phase schedule.
// All randomness derives from (seed, global step), so runs resume bit-exactly.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data)
      : cfg_(std::move(cfg)), data_(data), model_(cfg_.model, cfg_.seed) {
    cfg_.validate();
    adam_.ensure(model_.params());
    if (cfg_.phase2.steps > 0 && cfg_.phase2_multiplier != data_.manifest().hires_factor)
      throw std::invalid_argument("trainer: phase2.resolution_multiplier " + std::to_string(cfg_.phase2_multiplier) +
                                  " does not match the dataset hires factor " +
                                  std::to_string(data_.manifest().hires_factor));
    if (cfg_.phase1_resolution != data_.manifest().width || cfg_.phase1_resolution != data_.manifest().height)
      throw std::invalid_argument("trainer: phase1.resolution does not match the dataset resolution");
  }

  DepthPoseModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  AdamState& adam() { return adam_; }
  long long step() const { return step_; }
  int phase() const { return step_ > cfg_.phase1.steps ? 2 : 1; }

  // One optimization step at the given global step index (1-based).
  StepReport run_step(long long global_step) {
    const bool phase2 = global_step > cfg_.phase1.steps;
    const PhaseConfig& pc = phase2 ? cfg_.phase2 : cfg_.phase1;
    const bool hires = phase2;

    Rng step_rng(mix_seed(cfg_.seed, 0x5354455000ULL + static_cast<std::uint64_t>(global_step)));
    const auto& scenes = data_.manifest().train_scenes;
    std::vector<Triplet> batch;
    for (int b = 0; b < pc.batch_size; ++b)
      batch.push_back(data_.load(scenes[static_cast<size_t>(step_rng.uniform_int(static_cast<int>(scenes.size())))],
                                 hires, false));

    StepReport rep;
    rep.step = global_step;
    rep.phase = phase2 ? 2 : 1;

    std::vector<Tensor> t_items, s1_items, s2_items;
    for (const Triplet& t : batch) {
      t_items.push_back(t.target);
      s1_items.push_back(t.source1);
      s2_items.push_back(t.source2);
    }
    Tensor target = detail::stack_batch(t_items);
    Tensor source1 = detail::stack_batch(s1_items);
    Tensor source2 = detail::stack_batch(s2_items);
    const Intrinsics K = batch[0].intrinsics;
    const int h = K.height, w = K.width;

    Tape tape;
    auto net = model_.bind(tape);
    FullOutput out = net.forward_full(target, source1, source2);

    // pose tensors shared across scales
    Tensor pose1 = out.pose1, pose2 = out.pose2;

    // static (unwarped) photometric errors: plain values, computed once
    Tensor pe_static1 = pe(target, source1, cfg_.loss.alpha);
    Tensor pe_static2 = pe(target, source2, cfg_.loss.alpha);

    LossComponents comps;
    MaskMap mask;
    Tensor finest_depth;
    for (int s = 0; s < cfg_.model.scales; ++s) {
      Tensor disp = out.disparities[static_cast<size_t>(s)];
      Tensor disp_full = (s == 0) ? disp : resize_bilinear(disp, h, w);
      Tensor depth = disparity_to_depth(disp_full, cfg_.model.d_min, cfg_.model.d_max);
      if (s == 0) finest_depth = depth;
      Tensor warped1 = warp(source1, depth, pose1, K);
      Tensor warped2 = warp(source2, depth, pose2, K);
      Tensor pe_w1 = pe(target, warped1, cfg_.loss.alpha);
      Tensor pe_w2 = pe(target, warped2, cfg_.loss.alpha);
      Tensor min_warped = min_reprojection({pe_w1, pe_w2});
      if (s == 0) {
        mask = automask({pe_w1, pe_w2}, {pe_static1, pe_static2});
        Tensor min_static = min_reprojection({pe_static1, pe_static2});
        MaskRegularization reg = mask_regularization(mask, min_warped, min_static);
        comps.mask_reg = reg.surrogate;
        rep.mask_reg_literal = reg.literal;
        double lam = 0.0;
        for (double v : mask.data()) lam += v;
        rep.mean_lambda = lam / mask.size();
      }
      comps.photo_maps.push_back(min_warped);
      comps.smooth_terms.push_back(smoothness(disp_full, target));
    }

    // second forward pass on the augmented image
    const bool want_aug = cfg_.model.aug_loss_enabled && cfg_.loss.alpha_a > 0.0;
    if (want_aug) {
      std::vector<Tensor> aug_imgs, aug_depths, aug_valids;
      for (int b = 0; b < pc.batch_size; ++b) {
        Rng item_rng(mix_seed(cfg_.seed, 0x41554700ULL + static_cast<std::uint64_t>(global_step) * 64 +
                                             static_cast<std::uint64_t>(b)));
        AugParams p = sample_aug(item_rng, cfg_.aug, w, h);
        Tensor img_b = pc.batch_size == 1 ? target.detached() : slice(target, 0, b, 1).detached();
        Tensor dep_b =
            pc.batch_size == 1 ? finest_depth.detached() : slice(finest_depth, 0, b, 1).detached();
        GeometricResult geo = apply_geometric(img_b, dep_b, p);
        aug_imgs.push_back(apply_photometric(geo.image, p, item_rng));
        aug_depths.push_back(geo.depth);
        aug_valids.push_back(geo.validity);
      }
      Tensor aug_img = detail::stack_batch(aug_imgs);
      Tensor depth_true = detail::stack_batch(aug_depths);
      Tensor validity = detail::stack_batch(aug_valids);

      Tensor disp_aug = net.depth_forward(aug_img)[0];
      Tensor depth_out = disparity_to_depth(disp_aug, cfg_.model.d_min, cfg_.model.d_max);
      comps.aug_term = augmentation_loss(depth_true, depth_out, validity);
      rep.aug_pass_ran = true;
    }

    LossWeights weights = cfg_.loss;
    if (!want_aug) weights.alpha_a = 0.0;
    TotalLoss total = total_loss(comps, mask, weights);
    rep.total = value_of(total.value);
    rep.photometric = total.photometric;
    rep.smooth = total.smooth;
    rep.mask_reg = total.mask_reg;
    rep.aug = total.aug;

    if (!std::isfinite(rep.total)) {
      rep.skipped = true;
      return rep;
    }

    model_.params().zero_grads();
    tape.backward(total.value);

    double gn = 0.0;
    bool finite = true;
    for (size_t i = 0; i < model_.params().count(); ++i)
      for (double g : model_.params().at(i).grad) {
        if (!std::isfinite(g)) finite = false;
        gn += g * g;
      }
    rep.grad_norm = std::sqrt(gn);
    if (!finite) {
      rep.skipped = true;
      return rep;
    }

    AdamConfig ac;
    ac.lr = pc.lr;
    adam_.step(model_.params(), ac);
    return rep;
  }

  // Freeze the configured groups and reset optimizer moments for phase 2
  // (gradient scale changes with resolution).
  void enter_phase2() {
    for (const std::string& g : cfg_.phase2_freeze) model_.params().set_trainable(g, false);
    adam_.reset();
  }

  void write_checkpoint_file(const std::string& path, const nlohmann::json& config_json) const {
    std::vector<CheckpointEntry> entries = model_.export_params();
    std::vector<CheckpointEntry> adam_entries = adam_.export_entries();
    entries.insert(entries.end(), adam_entries.begin(), adam_entries.end());
    entries.push_back(CheckpointEntry::scalar("trainer.step", static_cast<double>(step_)));
    std::string cfg_str = config_json.dump();
    entries.push_back(CheckpointEntry::bytes("meta.config", {cfg_str.begin(), cfg_str.end()}));
    write_checkpoint(path, entries);
  }

  void resume_from(const std::string& path, const nlohmann::json& config_json) {
    std::vector<CheckpointEntry> entries = read_checkpoint(path);
    const CheckpointEntry* cfg_entry = nullptr;
    const CheckpointEntry* step_entry = nullptr;
    for (const CheckpointEntry& e : entries) {
      if (e.name == "meta.config") cfg_entry = &e;
      if (e.name == "trainer.step") step_entry = &e;
    }
    if (!cfg_entry || !step_entry) throw std::runtime_error("resume: checkpoint lacks trainer state");
    nlohmann::json stored = nlohmann::json::parse(std::string(cfg_entry->u8.begin(), cfg_entry->u8.end()));
    if (stored != config_json)
      throw std::runtime_error("resume: checkpoint was written with a different configuration");
    model_.import_params(entries);
    adam_.import_entries(entries);
    step_ = static_cast<long long>(step_entry->f64.at(0));
    if (step_ > cfg_.phase1.steps) enter_phase2();
  }

  // Runs from the current step to the end of both phases, appending one JSON
  // line per step and writing checkpoints at the configured cadence.
  std::vector<StepReport> run(const std::string& out_dir, const nlohmann::json& config_json,
                              std::ostream* log_stream = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "train_log.jsonl", std::ios::app);
    const long long total_steps = cfg_.phase1.steps + cfg_.phase2.steps;
    std::vector<StepReport> reports;
    while (step_ < total_steps) {
      ++step_;
      if (step_ == cfg_.phase1.steps + 1 && cfg_.phase2.steps > 0) enter_phase2();
      StepReport rep = run_step(step_);
      log << rep.to_json().dump() << "\n";
      if (log_stream && (step_ % 50 == 0 || step_ == 1))
        (*log_stream) << "step " << step_ << "/" << total_steps << " phase " << rep.phase << " loss " << rep.total
                      << " lambda " << rep.mean_lambda << "\n";
      if (step_ % cfg_.checkpoint_every == 0 || step_ == total_steps) {
        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_%06lld.dfck", step_);
        write_checkpoint_file((fs::path(out_dir) / name).string(), config_json);
        write_checkpoint_file((fs::path(out_dir) / "latest.dfck").string(), config_json);
      }
      reports.push_back(rep);
    }
    return reports;
  }

 private:
  TrainConfig cfg_;
  const Dataset& data_;
  DepthPoseModel model_;
  AdamState adam_;
  long long step_ = 0;
};

}  // namespace depthfit

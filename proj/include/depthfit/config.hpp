#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthfit/augment.hpp"
#include "depthfit/losses.hpp"
#include "depthfit/networks.hpp"

namespace depthfit {

struct PhaseConfig {
  int steps = 0;
  int batch_size = 1;
  double lr = 1e-4;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  NetworkConfig model;
  LossWeights loss;
  AugConfig aug;
  int phase1_resolution = 64;
  PhaseConfig phase1{2000, 2, 1e-4};
  int phase2_multiplier = 2;
  PhaseConfig phase2{200, 1, 1e-4};
  std::vector<std::string> phase2_freeze{"pose."};
  int checkpoint_every = 500;

  void validate() const {
    model.validate();
    loss.validate();
    aug.validate();
    if (phase1_resolution < 16 || phase1_resolution % 16 != 0)
      throw std::invalid_argument("config: phase1.resolution must be a positive multiple of 16");
    if (phase1.steps < 0 || phase2.steps < 0) throw std::invalid_argument("config: step counts must be >= 0");
    if (phase1.batch_size < 1 || phase2.batch_size < 1) throw std::invalid_argument("config: batch sizes must be >= 1");
    if (phase1.lr <= 0 || phase2.lr <= 0) throw std::invalid_argument("config: learning rates must be positive");
    if (phase2_multiplier < 2) throw std::invalid_argument("config: phase2.resolution_multiplier must be >= 2");
    if (checkpoint_every < 1) throw std::invalid_argument("config: checkpoint_every must be >= 1");
  }
};

namespace detail {

inline nlohmann::json default_config_json() {
  return nlohmann::json{
      {"format_version", 1},
      {"seed", 0},
      {"model",
       {{"encoder_channels", {16, 32, 64, 128}},
        {"scales", 4},
        {"d_min", 0.1},
        {"d_max", 100.0},
        {"attention", true},
        {"aug_loss", true}}},
      {"loss",
       {{"alpha", 0.85}, {"alpha_p", 1.0}, {"alpha_s", 0.001}, {"alpha_a", 0.1}, {"alpha_r", 0.001}}},
      {"aug",
       {{"p_flip", 0.5},          {"p_crop", 0.5},       {"crop_min_keep", 0.7}, {"p_affine", 0.3},
        {"scale_min", 0.9},       {"scale_max", 1.2},    {"skew_max", 0.1},      {"p_brightness", 0.5},
        {"brightness_min", 0.8},  {"brightness_max", 1.2}, {"p_jitter", 0.5},    {"jitter_max", 0.05},
        {"p_gamma", 0.5},         {"gamma_min", 0.8},    {"gamma_max", 1.2},     {"p_saturation", 0.5},
        {"saturation_min", 0.8},  {"saturation_max", 1.2}, {"p_noise", 0.5},     {"noise_std_max", 0.05}}},
      {"phase1", {{"resolution", 64}, {"steps", 2000}, {"batch_size", 2}, {"lr", 1e-4}}},
      {"phase2", {{"resolution_multiplier", 2}, {"steps", 200}, {"batch_size", 1}, {"lr", 1e-4},
                  {"freeze", {"pose."}}}},
      {"checkpoint_every", 500}};
}

// Merge user JSON over the defaults, rejecting keys the schema doesn't know.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& prefix) {
  if (!user.is_object()) throw std::invalid_argument("config: expected an object at " + (prefix.empty() ? "<root>" : prefix));
  for (auto it = user.begin(); it != user.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw std::invalid_argument("config: unknown key: " + path);
    if (base[it.key()].is_object() && !it.value().is_object())
      throw std::invalid_argument("config: expected an object at " + path);
    if (base[it.key()].is_object())
      merge_strict(base[it.key()], it.value(), path);
    else
      base[it.key()] = it.value();
  }
}

}  // namespace detail

inline TrainConfig config_from_json(nlohmann::json merged) {
  TrainConfig c;
  c.seed = merged.at("seed").get<std::uint64_t>();
  const auto& m = merged.at("model");
  c.model.encoder_channels = m.at("encoder_channels").get<std::vector<int>>();
  c.model.scales = m.at("scales").get<int>();
  c.model.d_min = m.at("d_min").get<double>();
  c.model.d_max = m.at("d_max").get<double>();
  c.model.attention_enabled = m.at("attention").get<bool>();
  c.model.aug_loss_enabled = m.at("aug_loss").get<bool>();
  const auto& l = merged.at("loss");
  c.loss.alpha = l.at("alpha").get<double>();
  c.loss.alpha_p = l.at("alpha_p").get<double>();
  c.loss.alpha_s = l.at("alpha_s").get<double>();
  c.loss.alpha_a = l.at("alpha_a").get<double>();
  c.loss.alpha_r = l.at("alpha_r").get<double>();
  const auto& a = merged.at("aug");
  c.aug.p_flip = a.at("p_flip").get<double>();
  c.aug.p_crop = a.at("p_crop").get<double>();
  c.aug.crop_min_keep = a.at("crop_min_keep").get<double>();
  c.aug.p_affine = a.at("p_affine").get<double>();
  c.aug.scale_min = a.at("scale_min").get<double>();
  c.aug.scale_max = a.at("scale_max").get<double>();
  c.aug.skew_max = a.at("skew_max").get<double>();
  c.aug.p_brightness = a.at("p_brightness").get<double>();
  c.aug.brightness_min = a.at("brightness_min").get<double>();
  c.aug.brightness_max = a.at("brightness_max").get<double>();
  c.aug.p_jitter = a.at("p_jitter").get<double>();
  c.aug.jitter_max = a.at("jitter_max").get<double>();
  c.aug.p_gamma = a.at("p_gamma").get<double>();
  c.aug.gamma_min = a.at("gamma_min").get<double>();
  c.aug.gamma_max = a.at("gamma_max").get<double>();
  c.aug.p_saturation = a.at("p_saturation").get<double>();
  c.aug.saturation_min = a.at("saturation_min").get<double>();
  c.aug.saturation_max = a.at("saturation_max").get<double>();
  c.aug.p_noise = a.at("p_noise").get<double>();
  c.aug.noise_std_max = a.at("noise_std_max").get<double>();
  const auto& p1 = merged.at("phase1");
  c.phase1_resolution = p1.at("resolution").get<int>();
  c.phase1.steps = p1.at("steps").get<int>();
  c.phase1.batch_size = p1.at("batch_size").get<int>();
  c.phase1.lr = p1.at("lr").get<double>();
  const auto& p2 = merged.at("phase2");
  c.phase2_multiplier = p2.at("resolution_multiplier").get<int>();
  c.phase2.steps = p2.at("steps").get<int>();
  c.phase2.batch_size = p2.at("batch_size").get<int>();
  c.phase2.lr = p2.at("lr").get<double>();
  c.phase2_freeze = p2.at("freeze").get<std::vector<std::string>>();
  c.checkpoint_every = merged.at("checkpoint_every").get<int>();
  c.validate();
  return c;
}

// Applies a flat dotted-path override ("loss.alpha_a=0"). Values parse as
// JSON when possible, otherwise as strings.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("override must look like key.path=value: " + assignment);
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  size_t pos = 0;
  while (true) {
    size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!node->contains(key)) throw std::invalid_argument("config: unknown key in override: " + path);
    if (dot == std::string::npos) {
      if ((*node)[key].is_object()) throw std::invalid_argument("config: override targets an object: " + path);
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

// Full pipeline: defaults <- optional file <- overrides; unknown keys reject.
inline TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& overrides = {},
                                     nlohmann::json* merged_out = nullptr) {
  nlohmann::json merged = detail::default_config_json();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json user = nlohmann::json::parse(f);
    if (user.contains("format_version") && user.at("format_version").get<int>() != 1)
      throw std::invalid_argument("config: unsupported format_version");
    detail::merge_strict(merged, user, "");
  }
  for (const std::string& o : overrides) apply_override(merged, o);
  TrainConfig cfg = config_from_json(merged);
  if (merged_out) *merged_out = merged;
  return cfg;
}

}  // namespace depthfit

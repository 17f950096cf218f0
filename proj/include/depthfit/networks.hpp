#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "depthfit/attention.hpp"
#include "depthfit/checkpoint.hpp"
#include "depthfit/ops.hpp"
#include "depthfit/rng.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

struct NetworkConfig {
  std::vector<int> encoder_channels = {16, 32, 64, 128};
  int scales = 4;
  double d_min = 0.1;
  double d_max = 100.0;
  bool attention_enabled = true;
  bool aug_loss_enabled = true;

  void validate() const {
    if (encoder_channels.size() != 4) throw std::invalid_argument("network: exactly 4 encoder stages supported");
    for (size_t i = 1; i < encoder_channels.size(); ++i)
      if (encoder_channels[i] <= encoder_channels[i - 1])
        throw std::invalid_argument("network: encoder channels must be strictly increasing");
    if (scales < 1 || scales > static_cast<int>(encoder_channels.size()))
      throw std::invalid_argument("network: scales must be in [1, stage count]");
    if (!(0.0 < d_min && d_min < d_max)) throw std::invalid_argument("network: need 0 < d_min < d_max");
  }
};

// Ordered collection of named parameters with prefix groups
// (encoder. / decoder. / attention. / pose.).
class ParamStore {
 public:
  Parameter& create(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::invalid_argument("param already exists: " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(shape)));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }
  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
    return *params_[it->second];
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  size_t count() const { return params_.size(); }
  Parameter& at(size_t i) { return *params_[i]; }
  const Parameter& at(size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }
  void set_trainable(const std::string& prefix, bool trainable) {
    bool any = false;
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) {
        p->trainable = trainable;
        any = true;
      }
    if (!any) throw std::invalid_argument("no parameter group matches prefix: " + prefix);
  }
  long long total_values() const {
    long long n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, size_t> index_;
};

struct FullOutput {
  std::vector<Tensor> disparities;  // [0] = finest (input resolution)
  Tensor pose1, pose2;              // (N,6), scaled
};

// Shared encoder, U-Net style depth decoder with sigmoid disparity heads at
// `scales` resolutions, and a 4-conv pose sub-network on concatenated deepest
// features. Stands in for the ResNet18 backbone at desk scale.
class DepthPoseModel {
 public:
  static constexpr double kPoseScale = 0.01;  // keeps initial warps near identity
  static constexpr int kPoseWidth = 32;

  DepthPoseModel(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    init(seed);
  }

  const NetworkConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Decoder feature width at level i (i = 3 deepest .. 0 finest).
  int decoder_width(int i) const {
    const auto& ch = cfg_.encoder_channels;
    return i >= 1 ? ch[static_cast<size_t>(i - 1)] : ch[0];
  }

  // Per-tape forward context: parameters are registered as leaves once and
  // shared by every forward pass recorded on the tape.
  class Bound {
   public:
    Bound(DepthPoseModel& m, Tape& t) : model_(m), tape_(t) {}

    Tensor p(const std::string& name) {
      auto it = leaves_.find(name);
      if (it != leaves_.end()) return it->second;
      Tensor leaf = tape_.leaf(model_.store_.get(name));
      leaves_.emplace(name, leaf);
      return leaf;
    }

    // 4 stages, stage k at H / 2^(k+1) with the configured channels.
    std::vector<Tensor> encode(const Tensor& image) {
      if (image.rank() != 4) throw std::invalid_argument("encode: image must be (N,C,H,W)");
      if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0)
        throw std::invalid_argument("encode: height and width must be divisible by 16, got " +
                                    shape_str(image.shape));
      std::vector<Tensor> stages;
      Tensor x = image;
      for (int k = 0; k < 4; ++k) {
        std::string base = "encoder." + std::to_string(k);
        x = elu(conv2d(x, p(base + ".w"), p(base + ".b"), 2, 1));
        stages.push_back(x);
      }
      return stages;
    }

    AttentionParams attention_params() {
      AttentionParams a;
      a.w_theta = p("attention.w_theta");
      a.w_phi = p("attention.w_phi");
      a.w_g = p("attention.w_g");
      a.w_f = p("attention.w_f");
      return a;
    }

    // Deepest decoder input: attention-enriched features concatenated with
    // the raw encoder features, or the raw features when disabled.
    Tensor deepest_input(const std::vector<Tensor>& pyramid) {
      return model_.cfg_.attention_enabled ? attach(pyramid.back(), attention_params()) : pyramid.back();
    }

    // Disparity maps, finest first; disparities[i] has resolution H / 2^i.
    std::vector<Tensor> decode(const std::vector<Tensor>& pyramid, const Tensor& deepest) {
      if (pyramid.size() != 4) throw std::invalid_argument("decode: expected a 4-stage pyramid");
      int want = model_.cfg_.attention_enabled ? 2 * model_.cfg_.encoder_channels[3]
                                               : model_.cfg_.encoder_channels[3];
      if (deepest.dim(1) != want)
        throw std::invalid_argument("decode: deepest input width mismatch: got " + std::to_string(deepest.dim(1)) +
                                    ", expected " + std::to_string(want));
      std::vector<Tensor> disps(static_cast<size_t>(model_.cfg_.scales));
      Tensor x = deepest;
      for (int i = 3; i >= 0; --i) {
        std::string base = "decoder." + std::to_string(i);
        x = elu(conv2d(x, p(base + ".w1"), p(base + ".b1"), 1, 1));
        x = resize_nearest(x, x.dim(2) * 2, x.dim(3) * 2);
        if (i > 0) x = concat_channels(x, pyramid[static_cast<size_t>(i - 1)]);
        x = elu(conv2d(x, p(base + ".w2"), p(base + ".b2"), 1, 1));
        if (i < model_.cfg_.scales)
          disps[static_cast<size_t>(i)] =
              sigmoid(conv2d(x, p("decoder.head" + std::to_string(i) + ".w"),
                             p("decoder.head" + std::to_string(i) + ".b"), 1, 1));
      }
      return disps;
    }

    // 6-DoF egomotion from concatenated deepest features: 4 convs with ELU
    // between, global average, linear head, scaled by kPoseScale.
    Tensor pose(const Tensor& feat_t, const Tensor& feat_s) {
      Tensor x = concat_channels(feat_t, feat_s);
      for (int k = 0; k < 4; ++k) {
        std::string base = "pose." + std::to_string(k);
        x = conv2d(x, p(base + ".w"), p(base + ".b"), 1, 1);
        if (k < 3) x = elu(x);
      }
      Tensor gap = reduce_mean(x, {2, 3}, true);
      Tensor v = conv2d(gap, p("pose.head.w"), p("pose.head.b"));
      return mul(reshape(v, {v.dim(0), 6}), kPoseScale);
    }

    std::vector<Tensor> depth_forward(const Tensor& image) {
      std::vector<Tensor> pyr = encode(image);
      return decode(pyr, deepest_input(pyr));
    }

    FullOutput forward_full(const Tensor& target, const Tensor& source1, const Tensor& source2) {
      std::vector<Tensor> pyr_t = encode(target);
      std::vector<Tensor> pyr_s1 = encode(source1);
      std::vector<Tensor> pyr_s2 = encode(source2);
      FullOutput out;
      out.disparities = decode(pyr_t, deepest_input(pyr_t));
      out.pose1 = pose(pyr_t.back(), pyr_s1.back());
      out.pose2 = pose(pyr_t.back(), pyr_s2.back());
      return out;
    }

    // Diagnostic: finest-scale disparity of a source frame (no loss uses it).
    Tensor source_disparity(const Tensor& source) { return depth_forward(source)[0]; }

   private:
    DepthPoseModel& model_;
    Tape& tape_;
    std::map<std::string, Tensor> leaves_;
  };

  Bound bind(Tape& tape) { return Bound(*this, tape); }

  std::vector<CheckpointEntry> export_params() const {
    std::vector<CheckpointEntry> out;
    for (size_t i = 0; i < store_.count(); ++i) {
      const Parameter& p = store_.at(i);
      out.push_back(CheckpointEntry::tensor("param." + p.name, p.shape, p.value));
    }
    return out;
  }

  void import_params(const std::vector<CheckpointEntry>& entries) {
    size_t seen = 0;
    for (const CheckpointEntry& e : entries) {
      if (e.name.rfind("param.", 0) != 0) continue;
      std::string name = e.name.substr(6);
      Parameter& p = store_.get(name);
      if (e.dims != p.shape)
        throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " + shape_str(e.dims) +
                                 " vs model " + shape_str(p.shape));
      p.value = e.f64;
      ++seen;
    }
    if (seen != store_.count())
      throw std::runtime_error("checkpoint: parameter count mismatch: file has " + std::to_string(seen) +
                               ", model expects " + std::to_string(store_.count()));
  }

 private:
  void build() {
    const auto& ch = cfg_.encoder_channels;
    int in_c = 3;
    for (int k = 0; k < 4; ++k) {
      store_.create("encoder." + std::to_string(k) + ".w", {ch[static_cast<size_t>(k)], in_c, 3, 3});
      store_.create("encoder." + std::to_string(k) + ".b", {ch[static_cast<size_t>(k)]});
      in_c = ch[static_cast<size_t>(k)];
    }
    if (cfg_.attention_enabled) {
      int c = ch[3];
      store_.create("attention.w_theta", {c / 2, c, 1, 1});
      store_.create("attention.w_phi", {c / 2, c, 1, 1});
      store_.create("attention.w_g", {c, c, 1, 1});
      store_.create("attention.w_f", {1, c, 1, 1});
    }
    int up_in = cfg_.attention_enabled ? 2 * ch[3] : ch[3];
    for (int i = 3; i >= 0; --i) {
      int width = decoder_width(i);
      std::string base = "decoder." + std::to_string(i);
      store_.create(base + ".w1", {width, up_in, 3, 3});
      store_.create(base + ".b1", {width});
      int cat_in = width + (i > 0 ? ch[static_cast<size_t>(i - 1)] : 0);
      store_.create(base + ".w2", {width, cat_in, 3, 3});
      store_.create(base + ".b2", {width});
      if (i < cfg_.scales) {
        store_.create("decoder.head" + std::to_string(i) + ".w", {1, width, 3, 3});
        store_.create("decoder.head" + std::to_string(i) + ".b", {1});
      }
      up_in = width;
    }
    int pose_in = 2 * ch[3];
    for (int k = 0; k < 4; ++k) {
      store_.create("pose." + std::to_string(k) + ".w", {kPoseWidth, pose_in, 3, 3});
      store_.create("pose." + std::to_string(k) + ".b", {kPoseWidth});
      pose_in = kPoseWidth;
    }
    store_.create("pose.head.w", {6, kPoseWidth, 1, 1});
    store_.create("pose.head.b", {6});
  }

  // Kaiming fan-in normal for conv weights, zeros for biases. Attention pair
  // projection w_f starts at zero so the block begins as identity-plus-copy.
  void init(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    for (size_t i = 0; i < store_.count(); ++i) {
      Parameter& p = store_.at(i);
      if (p.name == "attention.w_f") continue;  // stays zero
      if (p.shape.size() == 1) continue;        // biases stay zero
      int fan_in = p.shape[1] * (p.shape.size() == 4 ? p.shape[2] * p.shape[3] : 1);
      if (p.name.rfind("attention.", 0) == 0) {
        double s = std::sqrt(1.0 / fan_in);
        for (double& v : p.value) v = rng.uniform(-s, s);
      } else {
        double s = std::sqrt(2.0 / fan_in);
        for (double& v : p.value) v = rng.normal(0.0, s);
      }
    }
  }

  NetworkConfig cfg_;
  ParamStore store_;
};

}  // namespace depthfit

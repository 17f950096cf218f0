#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "depthfit/checkpoint.hpp"
#include "depthfit/networks.hpp"

namespace depthfit {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a ParamStore. Frozen parameters are skipped
// entirely: values and moments stay untouched.
class AdamState {
 public:
  void ensure(const ParamStore& store) {
    for (size_t i = 0; i < store.count(); ++i) {
      const Parameter& p = store.at(i);
      auto& slot = moments_[p.name];
      if (slot.m.size() != p.value.size()) {
        slot.m.assign(p.value.size(), 0.0);
        slot.v.assign(p.value.size(), 0.0);
      }
    }
  }

  long long step_count() const { return t_; }

  void reset() {
    for (auto& [name, slot] : moments_) {
      std::fill(slot.m.begin(), slot.m.end(), 0.0);
      std::fill(slot.v.begin(), slot.v.end(), 0.0);
    }
    t_ = 0;
  }

  void step(ParamStore& store, const AdamConfig& cfg) {
    ensure(store);
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < store.count(); ++i) {
      Parameter& p = store.at(i);
      if (!p.trainable) continue;
      Moments& slot = moments_[p.name];
      for (size_t j = 0; j < p.value.size(); ++j) {
        double g = p.grad[j];
        if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient in " + p.name);
        slot.m[j] = cfg.beta1 * slot.m[j] + (1.0 - cfg.beta1) * g;
        slot.v[j] = cfg.beta2 * slot.v[j] + (1.0 - cfg.beta2) * g * g;
        double m_hat = slot.m[j] / bc1;
        double v_hat = slot.v[j] / bc2;
        p.value[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
    }
  }

  std::vector<CheckpointEntry> export_entries() const {
    std::vector<CheckpointEntry> out;
    out.push_back(CheckpointEntry::scalar("adam.t", static_cast<double>(t_)));
    for (const auto& [name, slot] : moments_) {
      out.push_back(CheckpointEntry::tensor("adam.m." + name, {static_cast<int>(slot.m.size())}, slot.m));
      out.push_back(CheckpointEntry::tensor("adam.v." + name, {static_cast<int>(slot.v.size())}, slot.v));
    }
    return out;
  }

  void import_entries(const std::vector<CheckpointEntry>& entries) {
    moments_.clear();
    t_ = 0;
    for (const CheckpointEntry& e : entries) {
      if (e.name == "adam.t") {
        t_ = static_cast<long long>(e.f64.at(0));
      } else if (e.name.rfind("adam.m.", 0) == 0) {
        moments_[e.name.substr(7)].m = e.f64;
      } else if (e.name.rfind("adam.v.", 0) == 0) {
        moments_[e.name.substr(7)].v = e.f64;
      }
    }
  }

  const std::vector<double>& moment_m(const std::string& name) const { return moments_.at(name).m; }
  const std::vector<double>& moment_v(const std::string& name) const { return moments_.at(name).v; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments_;
  long long t_ = 0;
};

}  // namespace depthfit

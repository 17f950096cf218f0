#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "depthfit/tensor.hpp"

namespace depthfit {

// The seven standard depth metrics. Raw sums ride along so reports pool
// across images pixel-weighted (sum numerators and counts, then divide).
struct MetricReport {
  double abs_rel = 0.0, sq_rel = 0.0, rmse = 0.0, rmse_log = 0.0;
  double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;
  long long n_pixels = 0;
  double scale_factor = 1.0;

  double sum_abs_rel = 0.0, sum_sq_rel = 0.0, sum_sq_err = 0.0, sum_sq_log_err = 0.0;
  long long n_d1 = 0, n_d2 = 0, n_d3 = 0;

  void finalize() {
    if (n_pixels == 0) throw std::invalid_argument("metrics: no valid pixels");
    abs_rel = sum_abs_rel / n_pixels;
    sq_rel = sum_sq_rel / n_pixels;
    rmse = std::sqrt(sum_sq_err / n_pixels);
    rmse_log = std::sqrt(sum_sq_log_err / n_pixels);
    delta1 = static_cast<double>(n_d1) / n_pixels;
    delta2 = static_cast<double>(n_d2) / n_pixels;
    delta3 = static_cast<double>(n_d3) / n_pixels;
  }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty set");
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid - 1), v.end());
  return 0.5 * (v[mid - 1] + hi);
}

struct MedianScaled {
  Tensor pred;
  double factor = 1.0;
};

// pred * (median(gt_valid) / median(pred_valid)): resolves the monocular
// scale ambiguity before evaluation.
inline MedianScaled median_scale(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  if (pred.shape != gt.shape || pred.shape != valid.shape)
    throw std::invalid_argument("median_scale: shape mismatch");
  std::vector<double> pv, gv;
  for (int i = 0; i < pred.size(); ++i) {
    if (valid[i] == 0.0) continue;
    if (gt[i] <= 0.0) throw std::invalid_argument("median_scale: nonpositive ground truth on a valid pixel");
    pv.push_back(pred[i]);
    gv.push_back(gt[i]);
  }
  if (pv.empty()) throw std::invalid_argument("median_scale: empty valid set");
  double mp = median_of(pv);
  if (mp == 0.0) throw std::invalid_argument("median_scale: zero prediction median");
  MedianScaled out;
  out.factor = median_of(gv) / mp;
  out.pred = pred.clone();
  for (double& v : out.pred.data()) v *= out.factor;
  return out;
}

// Both prediction and ground truth are clamped to [d_min_eval, cap] before
// the error terms. Thresholds are strict (delta < 1.25^k).
inline MetricReport compute_metrics(const Tensor& pred, const Tensor& gt, double cap = 80.0,
                                    const Tensor& valid = Tensor(), double d_min_eval = 1e-3) {
  if (pred.shape != gt.shape) throw std::invalid_argument("metrics: shape mismatch");
  bool has_mask = valid.defined();
  if (has_mask && valid.shape != pred.shape) throw std::invalid_argument("metrics: mask shape mismatch");
  MetricReport r;
  for (int i = 0; i < pred.size(); ++i) {
    if (has_mask && valid[i] == 0.0) continue;
    double p = std::min(std::max(pred[i], d_min_eval), cap);
    double g = std::min(std::max(gt[i], d_min_eval), cap);
    double diff = p - g;
    r.sum_abs_rel += std::fabs(diff) / g;
    r.sum_sq_rel += diff * diff / g;
    r.sum_sq_err += diff * diff;
    double dl = std::log(p) - std::log(g);
    r.sum_sq_log_err += dl * dl;
    double ratio = std::max(p / g, g / p);
    r.n_d1 += ratio < 1.25;
    r.n_d2 += ratio < 1.25 * 1.25;
    r.n_d3 += ratio < 1.25 * 1.25 * 1.25;
    r.n_pixels += 1;
  }
  r.finalize();
  return r;
}

// Pixel-weighted pooling across per-image reports.
inline MetricReport aggregate(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: empty report list");
  MetricReport r;
  for (const MetricReport& e : reports) {
    r.sum_abs_rel += e.sum_abs_rel;
    r.sum_sq_rel += e.sum_sq_rel;
    r.sum_sq_err += e.sum_sq_err;
    r.sum_sq_log_err += e.sum_sq_log_err;
    r.n_d1 += e.n_d1;
    r.n_d2 += e.n_d2;
    r.n_d3 += e.n_d3;
    r.n_pixels += e.n_pixels;
  }
  r.scale_factor = reports[0].scale_factor;
  r.finalize();
  return r;
}

// Aligned plain-text table in the standard column order.
inline std::string metrics_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "Abs Rel" << std::setw(10) << "Sq Rel" << std::setw(10) << "RMSE"
     << std::setw(10) << "RMSE log" << std::setw(10) << "d<1.25" << std::setw(10) << "d<1.25^2" << std::setw(10)
     << "d<1.25^3" << "\n";
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(10) << r.abs_rel << std::setw(10) << r.sq_rel << std::setw(10) << r.rmse
     << std::setw(10) << r.rmse_log << std::setw(10) << r.delta1 << std::setw(10) << r.delta2 << std::setw(10)
     << r.delta3 << "\n";
  return os.str();
}

}  // namespace depthfit

#pragma once

// Training-dynamics analysis: EMA smoothing of logged metrics, detection of
// the turning point where completion length bottoms out while the format
// reward destabilizes, and best-checkpoint selection.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lorarl/error.hpp"

namespace lorarl {

struct MetricSeries {
  std::string name;
  std::vector<long> steps;
  std::vector<double> values;

  size_t size() const { return steps.size(); }

  void validate() const {
    if (steps.size() != values.size()) throw InputError(name + ": steps/values length mismatch");
    for (size_t i = 1; i < steps.size(); ++i) {
      if (steps[i] <= steps[i - 1]) throw InputError(name + ": steps must be strictly increasing");
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw InputError(name + ": non-finite value");
    }
  }
};

// y_0 = x_0, y_t = factor * x_t + (1 - factor) * y_{t-1}
inline MetricSeries ema(const MetricSeries& series, double factor) {
  series.validate();
  if (series.values.empty()) throw InputError("ema: empty series");
  if (!(factor > 0.0 && factor <= 1.0)) throw InputError("ema: factor must be in (0,1]");
  MetricSeries out = series;
  for (size_t i = 1; i < out.values.size(); ++i) {
    out.values[i] = factor * series.values[i] + (1.0 - factor) * out.values[i - 1];
  }
  return out;
}

inline size_t argmin_earliest(const std::vector<double>& v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[best]) best = i;
  return best;
}

struct TransitionParams {
  double ema_factor = 0.1;
  // Max distance in steps between the length minimum and a confirming
  // format-variance spike; also the half-width of the vertex refinement.
  long window = 50;
  // Trailing number of points in the format rolling variance.
  int variance_window = 10;
  // A spike is a rolling variance above this multiple of the median one.
  double variance_multiplier = 4.0;
  // Shorter logs are reported as not detected rather than analyzed.
  int min_points = 20;
};

struct TransitionEvidence {
  std::string reason;
  std::optional<long> smoothed_min_step;  // argmin of the EMA-smoothed length
  std::optional<long> refined_step;       // vertex of the best two-segment fit
  std::optional<long> spike_step;         // nearest confirming variance spike
  double baseline_variance = 0.0;
  double spike_ratio = 0.0;  // spike variance / baseline (inf when baseline is 0)
};

struct TransitionReport {
  std::optional<long> turning_step;
  bool detected = false;
  TransitionEvidence evidence;
};

namespace detail {

// Least-squares fit of a continuous two-segment line with its knee at
// x[knee]; returns the residual sum of squares.
inline double hinge_sse(const std::vector<double>& x, const std::vector<double>& y, size_t knee) {
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd target(n);
  const double v = x[knee];
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = x[static_cast<size_t>(i)] - v;
    design(i, 0) = 1.0;
    design(i, 1) = std::min(d, 0.0);
    design(i, 2) = std::max(d, 0.0);
    target[i] = y[static_cast<size_t>(i)];
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);
  return (design * coef - target).squaredNorm();
}

inline std::vector<double> rolling_variance(const std::vector<double>& v, int window) {
  std::vector<double> out;
  if (window < 2 || v.size() < static_cast<size_t>(window)) return out;
  const size_t w = static_cast<size_t>(window);
  for (size_t end = w; end <= v.size(); ++end) {
    double mean = 0.0;
    for (size_t i = end - w; i < end; ++i) mean += v[i];
    mean /= static_cast<double>(w);
    double ss = 0.0;
    for (size_t i = end - w; i < end; ++i) ss += (v[i] - mean) * (v[i] - mean);
    out.push_back(ss / static_cast<double>(w));
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
  }
  return m;
}

}  // namespace detail

inline TransitionReport detect_transition(const MetricSeries& format, const MetricSeries& length,
                                          const TransitionParams& params = {}) {
  format.validate();
  length.validate();
  TransitionReport report;
  auto& ev = report.evidence;
  if (length.size() < static_cast<size_t>(std::max(params.min_points, 3)) ||
      format.size() < static_cast<size_t>(std::max(params.variance_window, 2))) {
    ev.reason = "too few points";
    return report;
  }

  const MetricSeries smooth = ema(length, params.ema_factor);
  const size_t coarse = argmin_earliest(smooth.values);
  ev.smoothed_min_step = length.steps[coarse];
  if (coarse == 0 || coarse + 1 == length.size()) {
    ev.reason = "smoothed length has no interior minimum";
    return report;
  }

  // The causal EMA lags the raw series, so the vertex is re-estimated on the
  // raw length with a two-segment fit around the smoothed minimum.
  const long center = length.steps[coarse];
  std::vector<double> xs, ys;
  for (size_t i = 0; i < length.size(); ++i) {
    if (std::abs(length.steps[i] - center) <= params.window) {
      xs.push_back(static_cast<double>(length.steps[i] - center));
      ys.push_back(length.values[i]);
    }
  }
  size_t best_knee = 0;
  double best_sse = std::numeric_limits<double>::infinity();
  for (size_t k = 1; k + 1 < xs.size(); ++k) {
    const double sse = detail::hinge_sse(xs, ys, k);
    if (sse < best_sse) {
      best_sse = sse;
      best_knee = k;
    }
  }
  const long turning = xs.size() >= 3 ? center + static_cast<long>(std::lround(xs[best_knee])) : center;
  ev.refined_step = turning;

  const auto var = detail::rolling_variance(format.values, params.variance_window);
  ev.baseline_variance = detail::median(var);
  const double threshold = params.variance_multiplier * ev.baseline_variance;
  std::optional<size_t> spike;
  for (size_t i = 0; i < var.size(); ++i) {
    const long step = format.steps[i + static_cast<size_t>(params.variance_window) - 1];
    if (var[i] > threshold && var[i] > 1e-12 && std::abs(step - turning) <= params.window) {
      if (!spike || std::abs(step - turning) <
                        std::abs(format.steps[*spike + static_cast<size_t>(params.variance_window) - 1] - turning)) {
        spike = i;
      }
    }
  }
  if (!spike) {
    ev.reason = "no format-variance spike within window";
    return report;
  }
  ev.spike_step = format.steps[*spike + static_cast<size_t>(params.variance_window) - 1];
  ev.spike_ratio = ev.baseline_variance > 0.0 ? var[*spike] / ev.baseline_variance
                                              : std::numeric_limits<double>::infinity();
  ev.reason = "length minimum confirmed by format-variance spike";
  report.turning_step = turning;
  report.detected = true;
  return report;
}

struct CheckpointScore {
  long step = 0;
  double average = 0.0;
};

// Step with the highest average score; earliest on ties.
inline long select_best_checkpoint(const std::vector<CheckpointScore>& evals) {
  if (evals.empty()) throw InputError("select_best_checkpoint: no evaluations");
  const CheckpointScore* best = &evals.front();
  for (const auto& e : evals) {
    if (e.average > best->average || (e.average == best->average && e.step < best->step)) best = &e;
  }
  return best->step;
}

}  // namespace lorarl

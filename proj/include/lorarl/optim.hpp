#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "lorarl/error.hpp"

namespace lorarl {

struct ScheduleConfig {
  double peak_lr = 1e-6;
  double min_lr_fraction = 0.1;
  double warmup_ratio = 0.1;
  int total_steps = 1;

  int warmup_steps() const {
    return static_cast<int>(std::lround(warmup_ratio * static_cast<double>(total_steps)));
  }

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
    if (!(min_lr_fraction >= 0.0 && min_lr_fraction < 1.0)) {
      throw ConfigError("min_lr_fraction must be in [0,1)");
    }
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must be in [0,1)");
    if (total_steps < 1) throw ConfigError("total_steps must be positive");
    if (warmup_steps() >= total_steps) throw ConfigError("warmup steps must be fewer than total_steps");
  }
};

// Linear warmup to the peak, then cosine decay to min_lr_fraction * peak.
inline double lr_at(int step, const ScheduleConfig& s) {
  if (step < 0 || step > s.total_steps) {
    throw InputError("lr_at: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(s.total_steps) + "]");
  }
  const int warm = s.warmup_steps();
  if (step < warm) return s.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(s.total_steps - warm);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return s.peak_lr * (s.min_lr_fraction + (1.0 - s.min_lr_fraction) * cosine);
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  long step = 0;
  std::map<std::string, Eigen::MatrixXd> first_moment;
  std::map<std::string, Eigen::MatrixXd> second_moment;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

using NamedTensors = std::vector<std::pair<std::string, Eigen::MatrixXd*>>;

// Decoupled-weight-decay Adam over named tensors. Gradients are checked for
// finiteness before anything is written.
inline void adamw_step(const NamedTensors& params, const NamedTensors& grads, AdamWState& state,
                       double lr, const AdamWConfig& cfg = {}) {
  if (params.size() != grads.size()) throw DimensionError("adamw_step: params/grads count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != grads[i].first ||
        params[i].second->rows() != grads[i].second->rows() ||
        params[i].second->cols() != grads[i].second->cols()) {
      throw DimensionError("adamw_step: gradient does not match parameter " + params[i].first);
    }
    if (!grads[i].second->allFinite()) {
      throw NumericError("adamw_step: non-finite gradient for parameter " + grads[i].first);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i].first;
    Eigen::MatrixXd& p = *params[i].second;
    const Eigen::MatrixXd& g = *grads[i].second;
    auto [m_it, m_new] = state.first_moment.try_emplace(name, Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    auto [v_it, v_new] = state.second_moment.try_emplace(name, Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    Eigen::MatrixXd& m = m_it->second;
    Eigen::MatrixXd& v = v_it->second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    if (cfg.weight_decay != 0.0) p *= (1.0 - lr * cfg.weight_decay);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

}  // namespace lorarl

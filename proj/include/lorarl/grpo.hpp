#pragma once

// Group-relative policy optimization objective and its Dr.GRPO variant.
// Everything here is a pure function of per-token log-probabilities; the
// loss also returns d(loss)/d(logp_new) so the policy can backpropagate.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "lorarl/error.hpp"

namespace lorarl {

enum class GrpoVariant { grpo, dr_grpo };

inline std::string_view to_string(GrpoVariant v) {
  return v == GrpoVariant::grpo ? "grpo" : "dr_grpo";
}

inline GrpoVariant grpo_variant_from_string(std::string_view s) {
  if (s == "grpo" || s == "GRPO") return GrpoVariant::grpo;
  if (s == "dr_grpo" || s == "DrGRPO" || s == "drgrpo") return GrpoVariant::dr_grpo;
  throw ConfigError("unknown grpo variant: " + std::string(s));
}

// Where the importance ratio is formed and clipped.
enum class ClipLevel { token, sequence };

struct GrpoConfig {
  int group_size = 4;
  double clip_epsilon = 0.2;
  double kl_beta = 0.04;
  GrpoVariant variant = GrpoVariant::grpo;
  double std_floor = 1e-6;
  ClipLevel clip_level = ClipLevel::token;
  // Dr.GRPO divides summed token terms by this constant instead of each
  // completion's own length. Set to the model's max_completion_len.
  int max_completion_len = 64;

  void validate() const {
    if (group_size < 1) throw ConfigError("group_size must be positive");
    if (variant == GrpoVariant::grpo && group_size < 2) {
      throw ConfigError("GRPO needs group_size >= 2 for a defined std");
    }
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("clip_epsilon must be in (0,1)");
    if (!(kl_beta >= 0.0)) throw ConfigError("kl_beta must be nonnegative");
    if (!(std_floor > 0.0)) throw ConfigError("std_floor must be positive");
    if (max_completion_len < 1) throw ConfigError("max_completion_len must be positive");
  }
};

struct AdvantageVector {
  std::vector<double> values;
  GrpoVariant variant = GrpoVariant::grpo;
};

struct GroupStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline GroupStats group_stats(const std::vector<double>& rewards) {
  GroupStats s;
  if (rewards.empty()) return s;
  const double n = static_cast<double>(rewards.size());
  s.mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / n);
  return s;
}

inline AdvantageVector group_advantages(const std::vector<double>& rewards, const GrpoConfig& config) {
  if (rewards.empty()) throw InputError("group_advantages: empty reward group");
  const GroupStats s = group_stats(rewards);
  AdvantageVector adv;
  adv.variant = config.variant;
  adv.values.reserve(rewards.size());
  const double denom = std::max(s.std, config.std_floor);
  for (double r : rewards) {
    const double centered = r - s.mean;
    adv.values.push_back(config.variant == GrpoVariant::grpo ? centered / denom : centered);
  }
  return adv;
}

// k3 estimator rho - log(rho) - 1 with rho = pi_ref / pi_new.
inline double kl_estimate(double logp_new, double logp_ref) {
  if (!std::isfinite(logp_new) || !std::isfinite(logp_ref)) {
    throw NumericError("kl_estimate: non-finite log-probability");
  }
  const double diff = logp_ref - logp_new;
  return std::max(0.0, std::expm1(diff) - diff);
}

// d kl_estimate / d logp_new.
inline double kl_estimate_grad(double logp_new, double logp_ref) {
  return -std::expm1(logp_ref - logp_new);
}

struct SurrogateTerm {
  double value = 0.0;
  double grad = 0.0;  // d value / d logp_new
};

inline SurrogateTerm clipped_surrogate_term(double logp_new, double logp_old, double advantage,
                                            double epsilon) {
  const double ratio = std::exp(logp_new - logp_old);
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  const double unclipped_obj = ratio * advantage;
  const double clipped_obj = clipped * advantage;
  if (unclipped_obj <= clipped_obj) return {unclipped_obj, unclipped_obj};
  return {clipped_obj, 0.0};
}

inline double clipped_surrogate(double logp_new, double logp_old, double advantage, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InputError("clipped_surrogate: epsilon must be in (0,1)");
  return clipped_surrogate_term(logp_new, logp_old, advantage, epsilon).value;
}

struct RolloutGroup {
  std::string question_id;
  std::vector<std::vector<int>> completions;
  std::vector<std::vector<double>> logp_new;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_ref;
  std::vector<double> rewards;

  size_t size() const { return rewards.size(); }
};

struct GrpoLoss {
  double loss = 0.0;
  double mean_kl = 0.0;  // mean over completions of the per-token mean KL
  // d loss / d logp_new, same shape as group.logp_new.
  std::vector<std::vector<double>> dlogp_new;
};

inline void validate_group(const RolloutGroup& group, const AdvantageVector& adv) {
  const size_t g = group.rewards.size();
  if (g == 0) throw InputError("grpo_loss: empty group");
  if (adv.values.size() != g || group.logp_new.size() != g || group.logp_old.size() != g ||
      group.logp_ref.size() != g) {
    throw InputError("grpo_loss: mismatched group sizes (rewards " + std::to_string(g) +
                     ", advantages " + std::to_string(adv.values.size()) + ", logp_new " +
                     std::to_string(group.logp_new.size()) + ", logp_old " +
                     std::to_string(group.logp_old.size()) + ", logp_ref " +
                     std::to_string(group.logp_ref.size()) + ")");
  }
  for (size_t i = 0; i < g; ++i) {
    const size_t n = group.logp_new[i].size();
    if (group.logp_old[i].size() != n || group.logp_ref[i].size() != n) {
      throw InputError("grpo_loss: completion " + std::to_string(i) +
                       " has log-prob vectors of unequal length");
    }
    if (!std::isfinite(group.rewards[i])) throw InputError("grpo_loss: non-finite reward");
  }
}

// Negated objective, averaged over the group. Per completion, the token
// terms (clipped surrogate minus beta * KL) are averaged over the
// completion's own length (GRPO) or summed and divided by the fixed
// max_completion_len (Dr.GRPO). With sequence-level clipping the ratio and
// KL are formed from summed log-probs and no length normalization applies.
inline GrpoLoss grpo_loss(const RolloutGroup& group, const AdvantageVector& adv, const GrpoConfig& config) {
  validate_group(group, adv);
  if (adv.variant != config.variant) {
    throw InputError("grpo_loss: advantages computed with a different variant");
  }
  const size_t g = group.size();
  const double inv_g = 1.0 / static_cast<double>(g);
  GrpoLoss out;
  out.dlogp_new.resize(g);
  for (size_t i = 0; i < g; ++i) {
    const auto& ln = group.logp_new[i];
    const auto& lo = group.logp_old[i];
    const auto& lr = group.logp_ref[i];
    const size_t n = ln.size();
    out.dlogp_new[i].assign(n, 0.0);
    if (n == 0) continue;
    const double a = adv.values[i];

    if (config.clip_level == ClipLevel::sequence) {
      const double sn = std::accumulate(ln.begin(), ln.end(), 0.0);
      const double so = std::accumulate(lo.begin(), lo.end(), 0.0);
      const double sr = std::accumulate(lr.begin(), lr.end(), 0.0);
      const SurrogateTerm t = clipped_surrogate_term(sn, so, a, config.clip_epsilon);
      const double kl = kl_estimate(sn, sr);
      out.loss -= inv_g * (t.value - config.kl_beta * kl);
      out.mean_kl += inv_g * kl;
      const double dj = t.grad - config.kl_beta * kl_estimate_grad(sn, sr);
      std::fill(out.dlogp_new[i].begin(), out.dlogp_new[i].end(), -inv_g * dj);
      continue;
    }

    const double norm = config.variant == GrpoVariant::grpo
                            ? 1.0 / static_cast<double>(n)
                            : 1.0 / static_cast<double>(config.max_completion_len);
    double sum = 0.0;
    double kl_sum = 0.0;
    for (size_t t = 0; t < n; ++t) {
      const SurrogateTerm s = clipped_surrogate_term(ln[t], lo[t], a, config.clip_epsilon);
      const double kl = kl_estimate(ln[t], lr[t]);
      sum += s.value - config.kl_beta * kl;
      kl_sum += kl;
      out.dlogp_new[i][t] = -inv_g * norm * (s.grad - config.kl_beta * kl_estimate_grad(ln[t], lr[t]));
    }
    out.loss -= inv_g * norm * sum;
    out.mean_kl += inv_g * kl_sum / static_cast<double>(n);
  }
  return out;
}

}  // namespace lorarl

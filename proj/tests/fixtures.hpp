#pragma once

// Synthetic training logs shared by the dynamics tests and the acceptance
// binary.

#include <cmath>
#include <numbers>

#include "lorarl/dynamics.hpp"
#include "lorarl/random.hpp"

namespace lorarl::fixtures {

inline double gaussian(Rng& r) {
  const double u1 = 1.0 - uniform01(r);
  const double u2 = uniform01(r);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct SyntheticLog {
  MetricSeries format{"format_reward", {}, {}};
  MetricSeries length{"mean_completion_len", {}, {}};
  long turning_step = -1;  // -1 for logs without a transition
};

// Completion length falls linearly to a vertex and then climbs; the format
// reward is near 1 with a short oscillating burst just after the vertex.
inline SyntheticLog v_shape(uint64_t seed) {
  Rng r = derive_rng({seed, 0x7f1e});
  const long n = 400 + static_cast<long>(uniform_int(r, 601));
  const long vertex = static_cast<long>(0.3 * static_cast<double>(n)) +
                      static_cast<long>(uniform_int(r, static_cast<uint64_t>(0.4 * static_cast<double>(n))));
  const double top = uniform(r, 150, 250);
  const double down = uniform(r, 0.15, 0.4);
  const double up = uniform(r, 0.15, 0.4);
  const double noise = uniform(r, 0.2, 0.6);
  const long burst_start = vertex + static_cast<long>(uniform_int(r, 6));
  SyntheticLog log;
  log.turning_step = vertex;
  for (long t = 0; t < n; ++t) {
    const double base = t <= vertex ? top - down * static_cast<double>(t)
                                    : top - down * static_cast<double>(vertex) + up * static_cast<double>(t - vertex);
    log.length.steps.push_back(t);
    log.length.values.push_back(base + noise * gaussian(r));
    double f = 0.97 + 0.01 * gaussian(r);
    if (t >= burst_start && t < burst_start + 12) f = (t % 2 == 0) ? 0.3 : 0.95;
    log.format.steps.push_back(t);
    log.format.values.push_back(f);
  }
  return log;
}

// Length that only decreases and a format reward that stays stable.
inline SyntheticLog monotone(uint64_t seed) {
  Rng r = derive_rng({seed, 0x3e0d});
  const long n = 400 + static_cast<long>(uniform_int(r, 601));
  const double top = uniform(r, 150, 250);
  const double down = uniform(r, 0.05, 0.15);
  SyntheticLog log;
  for (long t = 0; t < n; ++t) {
    log.length.steps.push_back(t);
    log.length.values.push_back(top - down * static_cast<double>(t) + 0.3 * gaussian(r));
    log.format.steps.push_back(t);
    log.format.values.push_back(0.97 + 0.01 * gaussian(r));
  }
  return log;
}

}  // namespace lorarl::fixtures

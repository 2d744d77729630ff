#pragma once

// GPU-hour cost accounting and hardware-agnostic FLOPs estimates.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lorarl/error.hpp"

namespace lorarl {

struct CostModel {
  double usd_per_gpu_hour = 1.0;
  int num_gpus = 2;
  double step_wall_minutes = 1.0;
  double eval_gpu_hours_per_checkpoint = 1.0;

  void validate() const {
    if (!(usd_per_gpu_hour > 0.0) || num_gpus <= 0 || !(step_wall_minutes > 0.0) ||
        !(eval_gpu_hours_per_checkpoint > 0.0)) {
      throw ConfigError("cost model fields must all be positive");
    }
  }
};

struct CostRow {
  std::string task;
  double training_usd = 0.0;
  double evaluation_usd = 0.0;
  double total_usd = 0.0;
};

inline CostRow estimate_run_cost(int64_t steps, int64_t checkpoints_evaluated, const CostModel& m,
                                 std::string task = "run") {
  m.validate();
  if (steps < 0 || checkpoints_evaluated < 0) throw InputError("estimate_run_cost: negative count");
  CostRow row;
  row.task = std::move(task);
  row.training_usd = static_cast<double>(steps) * m.step_wall_minutes / 60.0 *
                     static_cast<double>(m.num_gpus) * m.usd_per_gpu_hour;
  row.evaluation_usd =
      static_cast<double>(checkpoints_evaluated) * m.eval_gpu_hours_per_checkpoint * m.usd_per_gpu_hour;
  row.total_usd = row.training_usd + row.evaluation_usd;
  return row;
}

// A reported total. `members` names the rows it should sum; an empty list
// means the total is not a row subset and only train + eval = total is
// checked.
struct NamedTotal {
  std::string name;
  std::vector<std::string> members;
  double training_usd = 0.0;
  double evaluation_usd = 0.0;
  double total_usd = 0.0;
};

struct ConsistencyCheck {
  std::string subject;
  std::string column;
  double expected = 0.0;
  double computed = 0.0;
  bool ok = false;
};

struct ConsistencyReport {
  std::vector<ConsistencyCheck> checks;
  bool ok() const {
    for (const auto& c : checks)
      if (!c.ok) return false;
    return true;
  }
};

inline ConsistencyReport check_table_consistency(const std::vector<CostRow>& rows,
                                                 const std::vector<NamedTotal>& totals,
                                                 double tolerance = 1e-9) {
  ConsistencyReport rep;
  auto add = [&](const std::string& subject, const std::string& column, double expected, double computed) {
    rep.checks.push_back({subject, column, expected, computed, std::abs(expected - computed) <= tolerance});
  };
  for (const auto& r : rows) add(r.task, "row identity", r.total_usd, r.training_usd + r.evaluation_usd);
  for (const auto& t : totals) {
    add(t.name, "row identity", t.total_usd, t.training_usd + t.evaluation_usd);
    if (t.members.empty()) continue;
    double train = 0.0, eval = 0.0, total = 0.0;
    for (const auto& name : t.members) {
      const CostRow* found = nullptr;
      for (const auto& r : rows)
        if (r.task == name) found = &r;
      if (found == nullptr) {
        rep.checks.push_back({t.name, "member " + name, 0.0, 0.0, false});
        continue;
      }
      train += found->training_usd;
      eval += found->evaluation_usd;
      total += found->total_usd;
    }
    add(t.name, "training", t.training_usd, train);
    add(t.name, "evaluation", t.evaluation_usd, eval);
    add(t.name, "total", t.total_usd, total);
  }
  return rep;
}

enum class FlopsMode { train, inference };

struct FlopsEstimate {
  int64_t trainable_params = 0;
  int64_t total_params = 0;
  int64_t tokens_processed = 0;
  double flops = 0.0;
  std::string convention;
};

// inference ~ 2 N T, training ~ 6 N T (forward + full backward).
inline FlopsEstimate estimate_flops(int64_t total_params, int64_t tokens, FlopsMode mode) {
  if (total_params <= 0 || tokens <= 0) throw InputError("estimate_flops: inputs must be positive");
  FlopsEstimate e;
  e.total_params = total_params;
  e.trainable_params = total_params;
  e.tokens_processed = tokens;
  const double per = mode == FlopsMode::train ? 6.0 : 2.0;
  e.flops = per * static_cast<double>(total_params) * static_cast<double>(tokens);
  e.convention = mode == FlopsMode::train ? "6*N*T" : "2*N*T";
  return e;
}

enum class BackwardCounting { trainable_only, all_params };

// Adapter training: the forward pass touches every parameter (2 N_total T);
// the backward pass is counted as 4 N_b T with N_b the trainable count by
// default, or N_total when counting all parameters (which recovers 6 N T).
inline FlopsEstimate estimate_adapter_training_flops(int64_t total_params, int64_t trainable_params,
                                                     int64_t tokens,
                                                     BackwardCounting counting = BackwardCounting::trainable_only) {
  if (total_params <= 0 || tokens <= 0 || trainable_params < 0 || trainable_params > total_params) {
    throw InputError("estimate_adapter_training_flops: invalid parameter or token counts");
  }
  FlopsEstimate e;
  e.total_params = total_params;
  e.trainable_params = trainable_params;
  e.tokens_processed = tokens;
  const double nb = counting == BackwardCounting::trainable_only ? static_cast<double>(trainable_params)
                                                                 : static_cast<double>(total_params);
  e.flops = (2.0 * static_cast<double>(total_params) + 4.0 * nb) * static_cast<double>(tokens);
  e.convention = counting == BackwardCounting::trainable_only ? "2*N_total*T + 4*N_trainable*T"
                                                              : "2*N_total*T + 4*N_total*T";
  return e;
}

}  // namespace lorarl

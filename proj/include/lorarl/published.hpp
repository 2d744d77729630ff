#pragma once

// Published reference numbers used as fixtures: the cost breakdown table,
// baseline/best-model evaluation rows and the per-checkpoint evaluation of
// the Open-RS2 run.

#include <array>
#include <string>
#include <vector>

#include "lorarl/costing.hpp"
#include "lorarl/dynamics.hpp"

namespace lorarl::published {

inline std::vector<CostRow> cost_breakdown_rows() {
  return {
      {"Baseline: model re-evaluation", 0, 6, 6},
      {"Main: STILL-3", 59, 7, 66},
      {"Main: DeepScaleR", 84, 10, 94},
      {"Main: Open-RS1", 40, 11, 51},
      {"Main: Open-RS2", 15, 17, 32},
      {"Main: Open-RS3", 15, 17, 32},
      {"Ablation: OpenThoughts dataset", 84, 10, 94},
      {"Ablation: OpenR1 dataset", 59, 7, 66},
      {"Ablation: LIMR dataset", 4, 4, 8},
      {"Ablation: DrGRPO algorithm", 15, 17, 32},
      {"Ablation: learning rate", 7, 8, 15},
      {"Ablation: LoRA rank/alpha", 14, 16, 30},
  };
}

inline std::vector<NamedTotal> cost_breakdown_totals() {
  std::vector<std::string> all;
  for (const auto& r : cost_breakdown_rows()) all.push_back(r.task);
  return {
      {"Total: all tasks", all, 396, 130, 526},
      {"Total: main tasks",
       {"Main: STILL-3", "Main: DeepScaleR", "Main: Open-RS1", "Main: Open-RS2", "Main: Open-RS3"},
       213,
       62,
       275},
      // Not sums of table rows: best checkpoint only, and a full epoch of
      // the best-performing task.
      {"Total: best checkpoint in each main task", {}, 80, 5, 85},
      {"Total: all checkpoints in best-performing task", {}, 14, 17, 31},
      {"Best model: train to best checkpoint and evaluate it", {}, 8, 1, 9},
  };
}

struct EvalRow {
  std::string name;
  std::array<double, 6> task_scores;  // AIME24, AIME25, AMC23, MATH500, GPQA, Minerva
  double reported_average;
};

inline EvalRow distilled_base_row() {
  return {"DeepSeek-R1-Distill-Qwen-1.5B", {23.33, 16.67, 62.50, 82.60, 31.82, 30.15}, 41.18};
}

inline EvalRow best_model_row() {
  return {"Open-RS2 step 450", {43.33, 26.67, 77.50, 87.00, 36.36, 32.72}, 50.60};
}

// Average pass@1 per checkpoint of the Open-RS2 run (875 steps per epoch).
inline std::vector<CheckpointScore> open_rs2_checkpoints() {
  return {{50, 47.72},  {100, 46.12}, {150, 47.07}, {200, 45.43}, {250, 46.24}, {300, 46.34},
          {350, 46.53}, {400, 43.58}, {450, 50.60}, {500, 43.05}, {550, 48.54}, {600, 45.62},
          {650, 43.89}, {700, 44.07}, {750, 46.33}, {800, 46.30}, {850, 44.72}};
}

}  // namespace lorarl::published

#pragma once

// Zero-shot pass@1: one decoded completion per problem, correct when it
// earns the accuracy reward.

#include <string>
#include <vector>

#include "lorarl/error.hpp"
#include "lorarl/policy.hpp"
#include "lorarl/random.hpp"
#include "lorarl/rewards.hpp"
#include "lorarl/sampler.hpp"
#include "lorarl/tasks.hpp"

namespace lorarl {

enum class DecodeMode { greedy, sampled };

inline DecodeMode decode_mode_from_string(std::string_view s) {
  if (s == "greedy") return DecodeMode::greedy;
  if (s == "sampled") return DecodeMode::sampled;
  throw ConfigError("decode mode must be \"greedy\" or \"sampled\"");
}

// Sampled evaluation uses the usual reasoning-model decode settings.
inline constexpr double kEvalTemperature = 0.6;
inline constexpr double kEvalTopP = 0.95;

struct TaskScore {
  std::string name;
  double pass_at_1 = 0.0;  // percent
};

struct EvalResult {
  std::vector<TaskScore> tasks;
  double average = 0.0;
};

inline EvalResult summarize_scores(std::vector<TaskScore> tasks) {
  if (tasks.empty()) throw InputError("evaluate: no tasks");
  EvalResult r;
  double sum = 0.0;
  for (const auto& t : tasks) sum += t.pass_at_1;
  r.average = sum / static_cast<double>(tasks.size());
  r.tasks = std::move(tasks);
  return r;
}

inline double pass_at_1(const PolicyParams& params, const Dataset& ds, DecodeMode mode, uint64_t seed = 0) {
  if (ds.problems.empty()) throw InputError("evaluate: dataset " + ds.name + " is empty");
  int correct = 0;
  for (size_t i = 0; i < ds.problems.size(); ++i) {
    const Problem& p = ds.problems[i];
    SamplingOptions opts;
    opts.greedy = mode == DecodeMode::greedy;
    opts.temperature = kEvalTemperature;
    opts.top_p = kEvalTopP;
    opts.max_len = params.config.max_completion_len;
    opts.seed = derive_rng({seed, i, 0xe7a1ull})();
    const SampledCompletion c = sample_completion(params, encode_prompt(p.prompt), opts);
    if (accuracy_reward(parse_trace(Tokenizer::decode(c.completion.tokens)), p.gold) == 1.0) ++correct;
  }
  return 100.0 * correct / static_cast<double>(ds.problems.size());
}

inline EvalResult evaluate(const PolicyParams& params, const std::vector<Dataset>& datasets,
                           DecodeMode mode = DecodeMode::greedy, uint64_t seed = 0) {
  if (datasets.empty()) throw InputError("evaluate: no datasets");
  std::vector<TaskScore> tasks;
  for (const auto& ds : datasets) tasks.push_back({ds.name, pass_at_1(params, ds, mode, seed)});
  return summarize_scores(std::move(tasks));
}

}  // namespace lorarl

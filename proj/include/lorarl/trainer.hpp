#pragma once

// LoRA-GRPO training loop, metric log and run artifacts.
//
// Output directory layout:
//   config.json          resolved run config
//   metrics.jsonl        one record per optimizer step
//   evals.jsonl          per-checkpoint pass@1 (only with eval.at_checkpoints)
//   checkpoints/ckpt-NNNNNN.bin
//   run_summary.json     written when the run completes

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lorarl/base_model.hpp"
#include "lorarl/checkpoint.hpp"
#include "lorarl/config.hpp"
#include "lorarl/evaluate.hpp"
#include "lorarl/grpo.hpp"
#include "lorarl/optim.hpp"
#include "lorarl/policy.hpp"
#include "lorarl/random.hpp"
#include "lorarl/rewards.hpp"
#include "lorarl/sampler.hpp"
#include "lorarl/tasks.hpp"
#include "lorarl/transformer.hpp"

namespace lorarl {

struct MetricRecord {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double accuracy_reward = 0.0;
  double format_reward = 0.0;
  double mean_completion_len = 0.0;
  double kl = 0.0;
};

inline std::string metric_line(const MetricRecord& r) {
  Json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["mean_reward"] = r.mean_reward;
  j["accuracy_reward"] = r.accuracy_reward;
  j["format_reward"] = r.format_reward;
  j["mean_completion_len"] = r.mean_completion_len;
  j["kl"] = r.kl;
  return j.dump();
}

inline MetricRecord parse_metric_line(const std::string& line) {
  const Json j = Json::parse(line);
  MetricRecord r;
  r.step = j.at("step").get<int64_t>();
  r.lr = j.at("lr").get<double>();
  r.loss = j.at("loss").get<double>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.accuracy_reward = j.at("accuracy_reward").get<double>();
  r.format_reward = j.at("format_reward").get<double>();
  r.mean_completion_len = j.at("mean_completion_len").get<double>();
  r.kl = j.at("kl").get<double>();
  return r;
}

inline std::vector<MetricRecord> read_metric_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open metric log " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_metric_line(line));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad metric record (" + e.what() + ")");
    }
  }
  return out;
}

inline std::string base_digest(const BaseWeights& base) {
  std::string bytes;
  const_cast<BaseWeights&>(base).for_each([&](const std::string& name, Eigen::MatrixXd& m) {
    bytes += name;
    bytes.append(reinterpret_cast<const char*>(m.data()), static_cast<size_t>(m.size()) * sizeof(double));
  });
  return sha256_hex(bytes);
}

inline Dataset load_training_data(const RunConfig& cfg) {
  if (cfg.data.path) return load_jsonl(*cfg.data.path);
  return gen_arithmetic(cfg.data.seed, cfg.data.count, cfg.data.difficulty);
}

inline std::vector<Dataset> eval_datasets(const RunConfig& cfg) {
  std::vector<Dataset> out;
  for (uint64_t s : cfg.eval.seeds) out.push_back(gen_arithmetic(s, cfg.eval.problems, cfg.eval.difficulty));
  return out;
}

inline int64_t steps_per_epoch(size_t dataset_size, int questions_per_step) {
  return static_cast<int64_t>((dataset_size + static_cast<size_t>(questions_per_step) - 1) /
                              static_cast<size_t>(questions_per_step));
}

inline int64_t resolve_total_steps(const RunConfig& cfg, size_t dataset_size) {
  if (cfg.training.total_steps) return *cfg.training.total_steps;
  return cfg.training.epochs * steps_per_epoch(dataset_size, cfg.training.questions_per_step);
}

// Seeded shuffle for one epoch.
inline std::vector<size_t> epoch_order(uint64_t master_seed, int64_t epoch, size_t n) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng = derive_rng({master_seed, static_cast<uint64_t>(epoch), 0xda7aull});
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_int(rng, i)]);
  return order;
}

// Base weights: loaded from a checkpoint when configured, otherwise
// pretrained deterministically from the base spec. Adapters are fresh.
inline PolicyParams build_initial_policy(const RunConfig& cfg) {
  PolicyParams p;
  p.config = cfg.model;
  if (cfg.base.checkpoint) {
    const Checkpoint src = load_checkpoint(*cfg.base.checkpoint);
    if (!(src.config.model == cfg.model)) {
      throw ConfigError("base checkpoint " + *cfg.base.checkpoint + " has a different model config");
    }
    p.base = src.params.base;
  } else {
    p.base = pretrain_base(cfg.model, cfg.base.pretrain, cfg.base.model_seed);
  }
  p.adapters = init_adapters(cfg.model, cfg.lora, cfg.master_seed);
  return p;
}

struct StepContext {
  const RunConfig& cfg;
  const Dataset& data;
  ScheduleConfig schedule;
};

// One optimizer step: rollouts for questions_per_step questions (processed
// in grad_accum micro-batches), reward scoring, group advantages, loss and
// an AdamW update of the adapters. `pos` advances through the epoch order.
inline MetricRecord train_step(PolicyParams& params, AdamWState& opt, DataCursor& pos,
                               std::vector<size_t>& order, int64_t step, const StepContext& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const int qps = cfg.training.questions_per_step;
  const int g = cfg.grpo.group_size;
  const int micro = qps / cfg.training.grad_accum;
  const double inv_q = 1.0 / static_cast<double>(qps);
  const uint64_t seed = cfg.master_seed;

  MetricRecord rec;
  rec.step = step;
  rec.lr = lr_at(static_cast<int>(step), ctx.schedule);
  PolicyGrads grads = PolicyGrads::zeros(params, false);

  for (int m = 0; m < cfg.training.grad_accum; ++m) {
    for (int qi = 0; qi < micro; ++qi) {
      const int q = m * micro + qi;
      if (pos.cursor >= static_cast<int64_t>(order.size())) {
        pos.epoch += 1;
        pos.cursor = 0;
        order = epoch_order(seed, pos.epoch, ctx.data.size());
      }
      const Problem& problem = ctx.data.problems[order[static_cast<size_t>(pos.cursor++)]];
      const TokenSequence prompt = encode_prompt(problem.prompt);

      // Rollouts come from the policy as it stands before this update; the
      // sampler's log-probs are the old-policy terms.
      RolloutGroup group;
      group.question_id = problem.id;
      std::vector<TokenSequence> completions;
      for (int i = 0; i < g; ++i) {
        SamplingOptions so;
        so.temperature = cfg.training.rollout_temperature;
        so.top_p = cfg.training.rollout_top_p;
        so.max_len = cfg.model.max_completion_len;
        so.seed = derive_rng({seed, static_cast<uint64_t>(step), static_cast<uint64_t>(q),
                              static_cast<uint64_t>(i), 0x5011ull})();
        SampledCompletion sc = sample_completion(params, prompt, so);
        const std::string text = Tokenizer::decode(sc.completion.tokens);
        const int len = static_cast<int>(sc.completion.size());
        const ScoreInput in{text, problem.gold, len, cfg.model.max_completion_len};
        const RewardReport rep = score_completion(in, cfg.rewards);
        const ReasoningTrace trace = parse_trace(text);
        rec.mean_reward += rep.total;
        rec.accuracy_reward += accuracy_reward(trace, problem.gold);
        rec.format_reward += format_reward(trace);
        rec.mean_completion_len += len;

        group.rewards.push_back(rep.total);
        group.completions.push_back(sc.completion.tokens);
        group.logp_old.push_back(std::move(sc.logp));
        group.logp_ref.push_back(logprobs(params, prompt, sc.completion, {Mode::eval, 0, false}));
        completions.push_back(std::move(sc.completion));
      }

      const AdvantageVector adv = group_advantages(group.rewards, cfg.grpo);
      std::vector<ForwardResult> fwd;
      for (int i = 0; i < g; ++i) {
        const uint64_t dseed = derive_rng({seed, static_cast<uint64_t>(step), static_cast<uint64_t>(q),
                                           static_cast<uint64_t>(i), 0xd209ull})();
        fwd.push_back(forward(params, prompt, completions[static_cast<size_t>(i)], {Mode::train, dseed, true}));
        group.logp_new.push_back(fwd.back().logp);
      }
      const GrpoLoss loss = grpo_loss(group, adv, cfg.grpo);
      rec.loss += inv_q * loss.loss;
      rec.kl += inv_q * loss.mean_kl;
      if (!std::isfinite(loss.loss)) continue;
      for (int i = 0; i < g; ++i) {
        std::vector<double> d = loss.dlogp_new[static_cast<size_t>(i)];
        for (double& x : d) x *= inv_q;
        backward(params, fwd[static_cast<size_t>(i)].tape, d, grads);
      }
    }
  }
  const double n = static_cast<double>(qps) * g;
  rec.mean_reward /= n;
  rec.accuracy_reward /= n;
  rec.format_reward /= n;
  rec.mean_completion_len /= n;
  if (!std::isfinite(rec.loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }
  adamw_step(named_tensors(params.adapters), named_tensors(grads.adapters), opt, rec.lr, cfg.optimizer);
  return rec;
}

struct TrainOptions {
  std::optional<int64_t> stop_at;                    // stop after this step (for interruption)
  std::optional<std::filesystem::path> resume_from;  // checkpoint to continue from
  std::function<void(const MetricRecord&)> on_step;  // progress callback
};

struct TrainResult {
  Checkpoint final_checkpoint;
  int64_t total_steps = 0;
  bool completed = false;
  std::filesystem::path out_dir;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, int64_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt-%06lld.bin", static_cast<long long>(step));
  return out_dir / "checkpoints" / name;
}

namespace detail {

// Keeps the lines of a JSONL file whose "step" is <= max_step.
inline void truncate_jsonl_after(const std::filesystem::path& path, int64_t max_step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    if (j.at("step").get<int64_t>() <= max_step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << kept;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

inline void append_eval(const std::filesystem::path& path, int64_t step, const EvalResult& r) {
  Json j;
  j["step"] = step;
  Json tasks = Json::object();
  for (const auto& t : r.tasks) tasks[t.name] = t.pass_at_1;
  j["tasks"] = tasks;
  j["average"] = r.average;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << j.dump() << "\n";
}

}  // namespace detail

inline Json run_summary_json(const RunConfig& cfg, const PolicyParams& params, int64_t total_steps,
                             const std::vector<MetricRecord>& log, const std::string& base_initial,
                             const std::string& base_final, int64_t checkpoints, int64_t checkpoints_evaluated) {
  double completion_tokens = 0.0;
  const double per_step = static_cast<double>(cfg.training.questions_per_step) * cfg.grpo.group_size;
  for (const auto& r : log) completion_tokens += r.mean_completion_len * per_step;
  Json j;
  j["config_hash"] = config_hash(cfg);
  j["steps"] = total_steps;
  j["checkpoints"] = checkpoints;
  j["checkpoints_evaluated"] = checkpoints_evaluated;
  j["total_params"] = params.total_parameter_count();
  j["trainable_params"] = params.adapters.parameter_count();
  j["tokens_processed"] = static_cast<int64_t>(std::llround(completion_tokens));
  j["base_sha256_initial"] = base_initial;
  j["base_sha256_final"] = base_final;
  if (!log.empty()) {
    const size_t tail = std::min<size_t>(100, log.size());
    double acc = 0.0;
    for (size_t i = log.size() - tail; i < log.size(); ++i) acc += log[i].accuracy_reward;
    j["final_accuracy_reward_mean"] = acc / static_cast<double>(tail);
  }
  return j;
}

inline TrainResult train(const RunConfig& cfg, const TrainOptions& options = {}) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "checkpoints");
  const fs::path metrics_path = out / "metrics.jsonl";
  const fs::path evals_path = out / "evals.jsonl";

  const Dataset data = load_training_data(cfg);
  const int64_t total = resolve_total_steps(cfg, data.size());
  StepContext ctx{cfg, data, cfg.schedule};
  ctx.schedule.total_steps = static_cast<int>(std::max<int64_t>(total, 1));
  ctx.schedule.validate();
  const std::vector<Dataset> evals = cfg.eval.at_checkpoints ? eval_datasets(cfg) : std::vector<Dataset>{};

  Checkpoint ck;
  ck.config = cfg;
  std::string base_initial;
  if (options.resume_from) {
    ck = load_checkpoint(*options.resume_from);
    if (config_hash(ck.config) != config_hash(cfg)) {
      throw ConfigError("config hash mismatch: checkpoint " + options.resume_from->string() +
                        " was written by a different run config");
    }
    ck.config = cfg;
    detail::truncate_jsonl_after(metrics_path, ck.step);
    detail::truncate_jsonl_after(evals_path, ck.step);
    base_initial = base_digest(load_checkpoint(checkpoint_path(out, 0)).params.base);
  } else {
    ck.params = build_initial_policy(cfg);
    detail::write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
    detail::write_text(metrics_path, "");
    if (fs::exists(evals_path)) fs::remove(evals_path);
    if (fs::exists(out / "run_summary.json")) fs::remove(out / "run_summary.json");
    save_checkpoint(ck, checkpoint_path(out, 0));
    if (!evals.empty()) detail::append_eval(evals_path, 0, evaluate(ck.params, evals));
    base_initial = base_digest(ck.params.base);
  }

  std::vector<size_t> order = epoch_order(cfg.master_seed, ck.data.epoch, data.size());
  const int64_t last = options.stop_at ? std::min(*options.stop_at, total) : total;
  std::ofstream log(metrics_path, std::ios::binary | std::ios::app);
  for (int64_t step = ck.step + 1; step <= last; ++step) {
    const Checkpoint before = ck;
    MetricRecord rec;
    try {
      rec = train_step(ck.params, ck.optimizer, ck.data, order, step, ctx);
    } catch (const NumericError& e) {
      // Keep the last good state for inspection.
      save_checkpoint(before, out / "checkpoints" / ("crash-" + std::to_string(step) + ".bin"));
      throw NumericError(std::string(e.what()) + " (step " + std::to_string(step) + ")");
    }
    ck.step = step;
    log << metric_line(rec) << "\n";
    log.flush();
    if (options.on_step) options.on_step(rec);
    const bool at_interval = step % cfg.training.checkpoint_interval == 0;
    if (at_interval || step == last) {
      save_checkpoint(ck, checkpoint_path(out, step));
      if (!evals.empty() && (at_interval || step == total)) {
        detail::append_eval(evals_path, step, evaluate(ck.params, evals));
      }
    }
  }
  log.close();

  TrainResult result;
  result.total_steps = total;
  result.out_dir = out;
  result.completed = ck.step == total;
  if (result.completed) {
    const int64_t saved = total / cfg.training.checkpoint_interval +
                          (total % cfg.training.checkpoint_interval != 0 ? 1 : 0);
    const Json summary = run_summary_json(cfg, ck.params, total, read_metric_log(metrics_path), base_initial,
                                          base_digest(ck.params.base), saved,
                                          evals.empty() ? 0 : saved + 1);
    detail::write_text(out / "run_summary.json", summary.dump(2) + "\n");
  }
  result.final_checkpoint = std::move(ck);
  return result;
}

}  // namespace lorarl

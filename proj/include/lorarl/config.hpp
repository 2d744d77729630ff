#pragma once

// Run configuration: one JSON document whose defaults are the common
// hyperparameter settings (group size 4, gradient accumulation 4, batch of
// 32 completions, one epoch, warmup 0.1, rank 32 / alpha 128 / dropout 0.05,
// lr 1e-6). Unknown keys are rejected so typos do not silently fall back to
// defaults.

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lorarl/base_model.hpp"
#include "lorarl/error.hpp"
#include "lorarl/grpo.hpp"
#include "lorarl/hash.hpp"
#include "lorarl/optim.hpp"
#include "lorarl/policy.hpp"
#include "lorarl/rewards.hpp"

namespace lorarl {

using Json = nlohmann::ordered_json;

struct DataSpec {
  std::optional<std::string> path;  // JSONL file; when absent the generator below is used
  uint64_t seed = 0;
  int count = 1000;
  int difficulty = 1;
};

struct BaseSpec {
  std::optional<std::string> checkpoint;  // reuse base weights from a saved checkpoint
  uint64_t model_seed = 1;
  BasePretrainConfig pretrain;
};

struct TrainingSpec {
  int epochs = 1;
  std::optional<int> total_steps;  // overrides epochs when set
  int questions_per_step = 8;
  int grad_accum = 4;
  int checkpoint_interval = 50;
  double rollout_temperature = 1.0;
  double rollout_top_p = 1.0;
};

struct EvalSpec {
  std::vector<uint64_t> seeds{1000};
  int problems = 200;
  int difficulty = 1;
  bool at_checkpoints = false;
};

struct RunConfig {
  ModelConfig model;
  LoraConfig lora;
  GrpoConfig grpo;
  ScheduleConfig schedule;  // total_steps is filled in by the trainer
  AdamWConfig optimizer;
  std::vector<RewardSpec> rewards{{RewardKind::accuracy, 2.0}, {RewardKind::format, 1.0}};
  DataSpec data;
  BaseSpec base;
  TrainingSpec training;
  EvalSpec eval;
  uint64_t master_seed = 0;
  std::string out_dir = "runs/run";

  void validate() const {
    model.validate();
    lora.validate();
    if (lora.rank > model.embed_dim) throw ConfigError("lora rank exceeds embed_dim");
    grpo.validate();
    if (grpo.max_completion_len != model.max_completion_len) {
      throw ConfigError("grpo.max_completion_len must equal model.max_completion_len");
    }
    if (!(schedule.peak_lr > 0.0)) throw ConfigError("schedule.peak_lr must be positive");
    if (!(schedule.min_lr_fraction >= 0.0 && schedule.min_lr_fraction <= 1.0)) {
      throw ConfigError("schedule.min_lr_fraction must be in [0,1]");
    }
    if (!(schedule.warmup_ratio >= 0.0 && schedule.warmup_ratio <= 1.0)) {
      throw ConfigError("schedule.warmup_ratio must be in [0,1]");
    }
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("optimizer betas must be in [0,1)");
    }
    if (!(optimizer.eps > 0.0) || !(optimizer.weight_decay >= 0.0)) {
      throw ConfigError("optimizer eps must be positive and weight_decay nonnegative");
    }
    validate_specs(rewards);
    if (!data.path && (data.count < 1 || data.difficulty < 1 || data.difficulty > 3)) {
      throw ConfigError("data generator needs count >= 1 and difficulty in 1..3");
    }
    base.pretrain.validate();
    if (training.epochs < 1) throw ConfigError("training.epochs must be at least 1");
    if (training.total_steps && *training.total_steps < 0) {
      throw ConfigError("training.total_steps must be nonnegative");
    }
    if (training.questions_per_step < 1 || training.grad_accum < 1 ||
        training.questions_per_step % training.grad_accum != 0) {
      throw ConfigError("training.questions_per_step must be a positive multiple of grad_accum");
    }
    if (training.checkpoint_interval < 1) throw ConfigError("training.checkpoint_interval must be positive");
    if (!(training.rollout_temperature > 0.0)) throw ConfigError("rollout_temperature must be positive");
    if (!(training.rollout_top_p > 0.0 && training.rollout_top_p <= 1.0)) {
      throw ConfigError("rollout_top_p must be in (0,1]");
    }
    if (eval.problems < 1 || eval.difficulty < 1 || eval.difficulty > 3) {
      throw ConfigError("eval needs problems >= 1 and difficulty in 1..3");
    }
  }
};

namespace detail {

// Reads fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    try {
      out = j_[key].get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type");
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return nullptr;
    return &j_[key];
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(where_ + ": unknown key \"" + k + "\"");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  Json j;
  Json kinds = Json::array();
  for (MatrixKind k : c.model.adapted_matrix_kinds) kinds.push_back(std::string(to_string(k)));
  j["model"] = {{"embed_dim", c.model.embed_dim},
                {"num_layers", c.model.num_layers},
                {"num_heads", c.model.num_heads},
                {"mlp_hidden", c.model.mlp_hidden},
                {"max_prompt_len", c.model.max_prompt_len},
                {"max_completion_len", c.model.max_completion_len},
                {"adapted_matrices", kinds}};
  j["lora"] = {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}};
  j["grpo"] = {{"group_size", c.grpo.group_size},
               {"clip_epsilon", c.grpo.clip_epsilon},
               {"kl_beta", c.grpo.kl_beta},
               {"variant", std::string(to_string(c.grpo.variant))},
               {"clip_level", c.grpo.clip_level == ClipLevel::token ? "token" : "sequence"},
               {"std_floor", c.grpo.std_floor}};
  j["schedule"] = {{"peak_lr", c.schedule.peak_lr},
                   {"min_lr_fraction", c.schedule.min_lr_fraction},
                   {"warmup_ratio", c.schedule.warmup_ratio}};
  j["optimizer"] = {{"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  Json rewards = Json::array();
  for (const auto& r : c.rewards) rewards.push_back({{"kind", std::string(to_string(r.kind))}, {"weight", r.weight}});
  j["rewards"] = rewards;
  j["data"] = {{"path", c.data.path ? Json(*c.data.path) : Json(nullptr)},
               {"seed", c.data.seed},
               {"count", c.data.count},
               {"difficulty", c.data.difficulty}};
  const auto& bp = c.base.pretrain;
  j["base"] = {{"checkpoint", c.base.checkpoint ? Json(*c.base.checkpoint) : Json(nullptr)},
               {"model_seed", c.base.model_seed},
               {"pretrain",
                {{"steps", bp.steps},
                 {"batch", bp.batch},
                 {"peak_lr", bp.peak_lr},
                 {"difficulty", bp.difficulty},
                 {"tagged_weight", bp.tagged_weight},
                 {"think_only_weight", bp.think_only_weight},
                 {"bare_weight", bp.bare_weight},
                 {"seed", bp.seed}}}};
  const auto& t = c.training;
  j["training"] = {{"epochs", t.epochs},
                   {"total_steps", t.total_steps ? Json(*t.total_steps) : Json(nullptr)},
                   {"questions_per_step", t.questions_per_step},
                   {"grad_accum", t.grad_accum},
                   {"checkpoint_interval", t.checkpoint_interval},
                   {"rollout_temperature", t.rollout_temperature},
                   {"rollout_top_p", t.rollout_top_p}};
  j["eval"] = {{"seeds", c.eval.seeds},
               {"problems", c.eval.problems},
               {"difficulty", c.eval.difficulty},
               {"at_checkpoints", c.eval.at_checkpoints}};
  j["master_seed"] = c.master_seed;
  j["out_dir"] = c.out_dir;
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ObjectReader top(j, "config");
  if (const Json* m = top.child("model")) {
    detail::ObjectReader r(*m, "model");
    r.get("embed_dim", c.model.embed_dim);
    r.get("num_layers", c.model.num_layers);
    r.get("num_heads", c.model.num_heads);
    r.get("mlp_hidden", c.model.mlp_hidden);
    r.get("max_prompt_len", c.model.max_prompt_len);
    r.get("max_completion_len", c.model.max_completion_len);
    std::optional<std::vector<std::string>> kinds;
    r.get_optional("adapted_matrices", kinds);
    if (kinds) {
      c.model.adapted_matrix_kinds.clear();
      for (const auto& k : *kinds) {
        try {
          c.model.adapted_matrix_kinds.insert(matrix_kind_from_string(k));
        } catch (const Error& e) {
          throw ConfigError(std::string("model.adapted_matrices: ") + e.what());
        }
      }
    }
    r.finish();
  }
  if (const Json* l = top.child("lora")) {
    detail::ObjectReader r(*l, "lora");
    r.get("rank", c.lora.rank);
    r.get("alpha", c.lora.alpha);
    r.get("dropout", c.lora.dropout);
    r.finish();
  }
  if (const Json* g = top.child("grpo")) {
    detail::ObjectReader r(*g, "grpo");
    r.get("group_size", c.grpo.group_size);
    r.get("clip_epsilon", c.grpo.clip_epsilon);
    r.get("kl_beta", c.grpo.kl_beta);
    std::string variant(to_string(c.grpo.variant));
    r.get("variant", variant);
    c.grpo.variant = grpo_variant_from_string(variant);
    std::string level = c.grpo.clip_level == ClipLevel::token ? "token" : "sequence";
    r.get("clip_level", level);
    if (level == "token") {
      c.grpo.clip_level = ClipLevel::token;
    } else if (level == "sequence") {
      c.grpo.clip_level = ClipLevel::sequence;
    } else {
      throw ConfigError("grpo.clip_level must be \"token\" or \"sequence\"");
    }
    r.get("std_floor", c.grpo.std_floor);
    r.finish();
  }
  c.grpo.max_completion_len = c.model.max_completion_len;
  if (const Json* s = top.child("schedule")) {
    detail::ObjectReader r(*s, "schedule");
    r.get("peak_lr", c.schedule.peak_lr);
    r.get("min_lr_fraction", c.schedule.min_lr_fraction);
    r.get("warmup_ratio", c.schedule.warmup_ratio);
    r.finish();
  }
  if (const Json* o = top.child("optimizer")) {
    detail::ObjectReader r(*o, "optimizer");
    r.get("beta1", c.optimizer.beta1);
    r.get("beta2", c.optimizer.beta2);
    r.get("eps", c.optimizer.eps);
    r.get("weight_decay", c.optimizer.weight_decay);
    r.finish();
  }
  if (const Json* rw = top.child("rewards")) {
    if (!rw->is_array()) throw ConfigError("rewards: expected an array");
    c.rewards.clear();
    for (const auto& item : *rw) {
      detail::ObjectReader r(item, "rewards[]");
      std::string kind;
      double weight = 1.0;
      r.get("kind", kind);
      r.get("weight", weight);
      r.finish();
      c.rewards.push_back({reward_kind_from_string(kind), weight});
    }
  }
  if (const Json* d = top.child("data")) {
    detail::ObjectReader r(*d, "data");
    r.get_optional("path", c.data.path);
    r.get("seed", c.data.seed);
    r.get("count", c.data.count);
    r.get("difficulty", c.data.difficulty);
    r.finish();
  }
  if (const Json* b = top.child("base")) {
    detail::ObjectReader r(*b, "base");
    r.get_optional("checkpoint", c.base.checkpoint);
    r.get("model_seed", c.base.model_seed);
    if (const Json* p = r.child("pretrain")) {
      detail::ObjectReader pr(*p, "base.pretrain");
      auto& bp = c.base.pretrain;
      pr.get("steps", bp.steps);
      pr.get("batch", bp.batch);
      pr.get("peak_lr", bp.peak_lr);
      pr.get("difficulty", bp.difficulty);
      pr.get("tagged_weight", bp.tagged_weight);
      pr.get("think_only_weight", bp.think_only_weight);
      pr.get("bare_weight", bp.bare_weight);
      pr.get("seed", bp.seed);
      pr.finish();
    }
    r.finish();
  }
  if (const Json* t = top.child("training")) {
    detail::ObjectReader r(*t, "training");
    r.get("epochs", c.training.epochs);
    r.get_optional("total_steps", c.training.total_steps);
    r.get("questions_per_step", c.training.questions_per_step);
    r.get("grad_accum", c.training.grad_accum);
    r.get("checkpoint_interval", c.training.checkpoint_interval);
    r.get("rollout_temperature", c.training.rollout_temperature);
    r.get("rollout_top_p", c.training.rollout_top_p);
    r.finish();
  }
  if (const Json* e = top.child("eval")) {
    detail::ObjectReader r(*e, "eval");
    r.get("seeds", c.eval.seeds);
    r.get("problems", c.eval.problems);
    r.get("difficulty", c.eval.difficulty);
    r.get("at_checkpoints", c.eval.at_checkpoints);
    r.finish();
  }
  top.get("master_seed", c.master_seed);
  top.get("out_dir", c.out_dir);
  top.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

// Identity of a run for resume checks. The output directory is excluded so
// a run can be moved or copied.
inline std::string config_hash(const RunConfig& c) {
  Json j = to_json(c);
  j.erase("out_dir");
  return sha256_hex(j.dump());
}

}  // namespace lorarl

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lorarl/checkpoint.hpp"
#include "lorarl/config.hpp"
#include "lorarl/evaluate.hpp"
#include "lorarl/published.hpp"
#include "lorarl/trainer.hpp"

using namespace lorarl;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lorarl_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Checkpoint digest with the output directory cleared, so runs written to
// different places can be compared.
std::string state_digest(const fs::path& p) {
  Checkpoint ck = load_checkpoint(p);
  ck.config.out_dir.clear();
  return sha256_hex(serialize_checkpoint(ck));
}

RunConfig small_config(const fs::path& out, int steps) {
  RunConfig c;
  c.base.pretrain.steps = 60;
  c.data.count = 400;
  c.training.total_steps = steps;
  c.training.questions_per_step = 4;
  c.training.grad_accum = 2;
  c.training.checkpoint_interval = 5;
  c.schedule.peak_lr = 1e-3;
  c.lora.rank = 4;
  c.eval.problems = 10;
  c.out_dir = out.string();
  return c;
}

}  // namespace

TEST_CASE("config json round trip and hashing") {
  RunConfig c = small_config("/tmp/x", 7);
  c.rewards = {{RewardKind::cosine, 1.5}, {RewardKind::format, 0.5}};
  c.grpo.variant = GrpoVariant::dr_grpo;
  const Json j = to_json(c);
  const RunConfig back = run_config_from_json(j);
  REQUIRE(to_json(back).dump() == j.dump());
  REQUIRE(config_hash(back) == config_hash(c));
  RunConfig moved = c;
  moved.out_dir = "/elsewhere";
  REQUIRE(config_hash(moved) == config_hash(c));
  RunConfig changed = c;
  changed.master_seed = 1;
  REQUIRE(config_hash(changed) != config_hash(c));
  REQUIRE(config_hash(c).size() == 64);
}

TEST_CASE("config rejects unknown keys and invalid values") {
  Json j = to_json(RunConfig{});
  j["training"]["bogus"] = 1;
  REQUIRE_THROWS_WITH(run_config_from_json(j), ContainsSubstring("bogus"));
  Json k = to_json(RunConfig{});
  k["training"]["grad_accum"] = 3;
  REQUIRE_THROWS_AS(run_config_from_json(k), ConfigError);
  Json m = to_json(RunConfig{});
  m["lora"]["rank"] = 0;
  REQUIRE_THROWS_AS(run_config_from_json(m), ConfigError);
  REQUIRE_THROWS_AS(load_run_config("/nonexistent/run.json"), std::exception);
}

TEST_CASE("defaults follow the published hyperparameters") {
  const RunConfig c;
  REQUIRE(c.lora.rank == 32);
  REQUIRE(c.lora.alpha == 128);
  REQUIRE(c.lora.dropout == 0.05);
  REQUIRE(c.schedule.peak_lr == 1e-6);
  REQUIRE(c.schedule.min_lr_fraction == 0.1);
  REQUIRE(c.schedule.warmup_ratio == 0.1);
  REQUIRE(c.grpo.kl_beta == 0.04);
  REQUIRE(c.grpo.group_size == 4);
  REQUIRE(c.rewards.size() == 2);
}

TEST_CASE("checkpoint bytes are stable and corruption is located") {
  const fs::path dir = scratch("ckpt");
  fs::create_directories(dir);
  Checkpoint ck;
  ck.config = small_config(dir, 3);
  ck.config.base.pretrain.steps = 0;
  ck.step = 3;
  ck.params.config = ck.config.model;
  ck.params.base = pretrain_base(ck.config.model, ck.config.base.pretrain, 1);
  ck.params.adapters = init_adapters(ck.config.model, ck.config.lora, 5);
  for (auto& [name, m] : named_tensors(ck.params.adapters)) m->setConstant(0.25);
  ck.data = {2, 17};
  const fs::path a = dir / "a.bin", b = dir / "b.bin";
  save_checkpoint(ck, a);
  const Checkpoint loaded = load_checkpoint(a);
  REQUIRE(loaded.step == 3);
  REQUIRE(loaded.data.epoch == 2);
  REQUIRE(loaded.data.cursor == 17);
  save_checkpoint(loaded, b);
  const std::string bytes = slurp(a);
  REQUIRE(sha256_hex(bytes) == sha256_hex(slurp(b)));

  std::string flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x40;
  REQUIRE_THROWS_AS(deserialize_checkpoint(flipped), IntegrityError);
  REQUIRE_THROWS_WITH(deserialize_checkpoint(flipped), ContainsSubstring("byte offset"));
  REQUIRE_THROWS_WITH(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)), ContainsSubstring("byte offset"));
  std::string magic = bytes;
  magic[0] = 'X';
  REQUIRE_THROWS_WITH(deserialize_checkpoint(magic), ContainsSubstring("byte offset 0"));

  // An edited config hash in the header is refused.
  const std::string hash = config_hash(ck.config);
  std::string edited = bytes;
  const size_t at = edited.find(hash);
  REQUIRE(at != std::string::npos);
  edited[at] = edited[at] == 'a' ? 'b' : 'a';
  REQUIRE_THROWS_AS(deserialize_checkpoint(edited), IntegrityError);
  fs::remove_all(dir);
}

TEST_CASE("zero-step run writes only the initial checkpoint") {
  const fs::path out = scratch("zero");
  const auto res = train(small_config(out, 0));
  REQUIRE(res.completed);
  REQUIRE(fs::exists(checkpoint_path(out, 0)));
  size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(out / "checkpoints")) ++files;
  REQUIRE(files == 1);
  REQUIRE(fs::file_size(out / "metrics.jsonl") == 0);
  REQUIRE(fs::exists(out / "config.json"));
  REQUIRE(load_run_config(out / "config.json").training.total_steps == 0);
  fs::remove_all(out);
}

TEST_CASE("identical runs give byte-identical logs and resume reproduces them") {
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  const auto ra = train(small_config(a, 20));
  train(small_config(b, 20));
  const std::string log_a = slurp(a / "metrics.jsonl");
  REQUIRE(std::count(log_a.begin(), log_a.end(), '\n') == 20);
  REQUIRE(log_a == slurp(b / "metrics.jsonl"));
  REQUIRE(state_digest(checkpoint_path(a, 20)) == state_digest(checkpoint_path(b, 20)));

  // Interrupted at 12 (past the step-10 checkpoint), resumed from 10.
  const RunConfig cc = small_config(c, 20);
  const auto partial = train(cc, {12, std::nullopt, {}});
  REQUIRE_FALSE(partial.completed);
  REQUIRE_FALSE(fs::exists(c / "run_summary.json"));
  const auto resumed = train(cc, {std::nullopt, checkpoint_path(c, 10), {}});
  REQUIRE(resumed.completed);
  REQUIRE(slurp(c / "metrics.jsonl") == log_a);
  REQUIRE(state_digest(checkpoint_path(c, 20)) == state_digest(checkpoint_path(a, 20)));
  REQUIRE(slurp(c / "run_summary.json") == slurp(a / "run_summary.json"));

  // Base weights never move.
  const Json summary = Json::parse(slurp(a / "run_summary.json"));
  REQUIRE(summary["base_sha256_initial"] == summary["base_sha256_final"]);
  REQUIRE(base_digest(ra.final_checkpoint.params.base) ==
          base_digest(load_checkpoint(checkpoint_path(a, 0)).params.base));
  REQUIRE(summary["steps"] == 20);
  REQUIRE(summary["checkpoints"] == 4);
  REQUIRE(summary["trainable_params"].get<int64_t>() < summary["total_params"].get<int64_t>());

  // Resuming under a different config is refused.
  RunConfig other = cc;
  other.master_seed = 99;
  REQUIRE_THROWS_AS(train(other, {std::nullopt, checkpoint_path(c, 10), {}}), ConfigError);
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("metric lines round trip") {
  const MetricRecord r{7, 1e-4, -0.25, 2.5, 0.75, 1.0, 33.5, 0.01};
  const std::string line = metric_line(r);
  REQUIRE(line.starts_with("{\"step\":7,\"lr\":"));
  const MetricRecord back = parse_metric_line(line);
  REQUIRE(metric_line(back) == line);
  REQUIRE_THROWS(parse_metric_line("{\"step\":1}"));
}

TEST_CASE("evaluation averages reproduce the published rows") {
  for (const auto& row : {published::distilled_base_row(), published::best_model_row()}) {
    std::vector<TaskScore> tasks;
    for (size_t i = 0; i < row.task_scores.size(); ++i) tasks.push_back({"t" + std::to_string(i), row.task_scores[i]});
    REQUIRE_THAT(summarize_scores(tasks).average, WithinAbs(row.reported_average, 1e-2));
  }
  REQUIRE(summarize_scores({{"a", 100}, {"b", 100}}).average == 100.0);
  REQUIRE_THROWS_AS(summarize_scores({}), InputError);
}

TEST_CASE("pass@1 is a deterministic percentage") {
  RunConfig c = small_config("/tmp/unused", 1);
  PolicyParams p;
  p.config = c.model;
  p.base = pretrain_base(c.model, c.base.pretrain, 1);
  p.adapters = init_adapters(c.model, c.lora, 0);
  const Dataset ds = gen_arithmetic(3, 20, 1);
  for (DecodeMode mode : {DecodeMode::greedy, DecodeMode::sampled}) {
    const double v = pass_at_1(p, ds, mode, 4);
    REQUIRE((v >= 0.0 && v <= 100.0));
    REQUIRE(std::fmod(v, 5.0) == 0.0);
    REQUIRE(pass_at_1(p, ds, mode, 4) == v);
  }
  REQUIRE_THROWS_AS(evaluate(p, {}), InputError);
  REQUIRE(decode_mode_from_string("sampled") == DecodeMode::sampled);
  REQUIRE_THROWS(decode_mode_from_string("beam"));
}

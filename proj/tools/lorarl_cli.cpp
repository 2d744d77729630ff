// lorarl command-line front end.
//
//   lorarl gen-data --seed S --count N --difficulty D --out data.jsonl
//   lorarl train --config run.json [--stop-at K] [--resume ckpt.bin]
//   lorarl eval --checkpoint ckpt.bin --data a.jsonl [--data b.jsonl] [--decode greedy|sampled]
//   lorarl analyze --log metrics.jsonl [--evals evals.jsonl] [--plot fig.svg]
//   lorarl cost --run-summary run_summary.json | --verify-paper-table
//   lorarl score [--in texts.jsonl] [--rewards accuracy:2,format:1]
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lorarl/checkpoint.hpp"
#include "lorarl/config.hpp"
#include "lorarl/costing.hpp"
#include "lorarl/dynamics.hpp"
#include "lorarl/evaluate.hpp"
#include "lorarl/published.hpp"
#include "lorarl/rewards.hpp"
#include "lorarl/tasks.hpp"
#include "lorarl/trainer.hpp"
#include "svg_plot.hpp"

using namespace lorarl;

namespace {

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path + ": malformed JSON (" + e.what() + ")");
  }
}

std::vector<RewardSpec> parse_reward_list(const std::string& text) {
  std::vector<RewardSpec> specs;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    RewardSpec s;
    const auto colon = item.find(':');
    s.kind = reward_kind_from_string(item.substr(0, colon));
    if (colon != std::string::npos) s.weight = std::stod(item.substr(colon + 1));
    specs.push_back(s);
  }
  validate_specs(specs);
  return specs;
}

Json transition_json(const TransitionReport& r, const TransitionParams& p) {
  auto opt = [](const std::optional<long>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["detected"] = r.detected;
  j["turning_step"] = opt(r.turning_step);
  j["evidence"] = {{"reason", r.evidence.reason},
                   {"smoothed_min_step", opt(r.evidence.smoothed_min_step)},
                   {"refined_step", opt(r.evidence.refined_step)},
                   {"spike_step", opt(r.evidence.spike_step)},
                   {"baseline_variance", r.evidence.baseline_variance},
                   {"spike_ratio", std::isfinite(r.evidence.spike_ratio) ? Json(r.evidence.spike_ratio)
                                                                          : Json("inf")}};
  j["params"] = {{"ema_factor", p.ema_factor},
                 {"window", p.window},
                 {"variance_window", p.variance_window},
                 {"variance_multiplier", p.variance_multiplier},
                 {"min_points", p.min_points}};
  return j;
}

int cmd_gen_data(uint64_t seed, int count, int difficulty, const std::string& out) {
  const Dataset ds = gen_arithmetic(seed, count, difficulty);
  save_jsonl(ds, out);
  std::cout << Json({{"name", ds.name}, {"count", ds.size()}, {"out", out}}).dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<long> stop_at, const std::string& resume,
              const std::string& out_dir, bool quiet) {
  RunConfig cfg = load_run_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  TrainOptions opts;
  opts.stop_at = stop_at;
  if (!resume.empty()) opts.resume_from = resume;
  if (!quiet) {
    opts.on_step = [](const MetricRecord& r) {
      if (r.step % 10 == 0) std::cerr << metric_line(r) << "\n";
    };
  }
  const TrainResult res = train(cfg, opts);
  std::cout << Json({{"out_dir", res.out_dir.string()},
                     {"step", res.final_checkpoint.step},
                     {"total_steps", res.total_steps},
                     {"completed", res.completed}})
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::vector<std::string>& data, const std::string& decode,
             uint64_t seed) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  std::vector<Dataset> sets;
  for (const auto& d : data) sets.push_back(load_jsonl(d));
  const EvalResult r = evaluate(ck.params, sets, decode_mode_from_string(decode), seed);
  Json tasks = Json::object();
  for (const auto& t : r.tasks) tasks[t.name] = t.pass_at_1;
  std::cout << Json({{"checkpoint", ckpt_path}, {"step", ck.step}, {"decode", decode}, {"tasks", tasks},
                     {"average", r.average}})
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_analyze(const std::string& log_path, const std::string& evals_path, const std::string& plot_path,
                const TransitionParams& params) {
  const auto log = read_metric_log(log_path);
  MetricSeries acc{"accuracy_reward", {}, {}}, fmt{"format_reward", {}, {}}, len{"mean_completion_len", {}, {}};
  for (const auto& r : log) {
    for (auto* s : {&acc, &fmt, &len}) s->steps.push_back(static_cast<long>(r.step));
    acc.values.push_back(r.accuracy_reward);
    fmt.values.push_back(r.format_reward);
    len.values.push_back(r.mean_completion_len);
  }
  const TransitionReport rep = detect_transition(fmt, len, params);
  Json out = transition_json(rep, params);
  out["points"] = log.size();

  std::optional<long> best;
  if (!evals_path.empty()) {
    std::vector<CheckpointScore> scores;
    std::ifstream in(evals_path, std::ios::binary);
    if (!in) throw InputError("cannot open " + evals_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      scores.push_back({j.at("step").get<long>(), j.at("average").get<double>()});
    }
    best = select_best_checkpoint(scores);
    for (const auto& s : scores) {
      if (s.step == *best) out["best_checkpoint"] = {{"step", s.step}, {"average", s.average}};
    }
  }

  if (!plot_path.empty() && !log.empty()) {
    std::vector<plot::Panel> panels;
    for (const auto* s : {&acc, &fmt, &len}) panels.push_back({*s, ema(*s, params.ema_factor)});
    std::vector<plot::Marker> markers;
    if (rep.turning_step) markers.push_back({*rep.turning_step, "turning point", "#2ca02c"});
    if (best) markers.push_back({*best, "best checkpoint", "#d62728"});
    std::ofstream svg(plot_path, std::ios::binary);
    if (!svg) throw InputError("cannot write " + plot_path);
    svg << plot::render_svg(panels, markers);
    out["plot"] = plot_path;
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_cost(const std::string& summary_path, bool verify, const CostModel& model, const std::string& backward,
             long checkpoints_override) {
  if (verify) {
    const auto rep =
        check_table_consistency(published::cost_breakdown_rows(), published::cost_breakdown_totals());
    Json checks = Json::array();
    for (const auto& c : rep.checks) {
      checks.push_back({{"subject", c.subject}, {"column", c.column}, {"expected", c.expected},
                        {"computed", c.computed}, {"ok", c.ok}});
    }
    std::cout << Json({{"ok", rep.ok()}, {"checks", checks}}).dump(2) << "\n";
    return rep.ok() ? 0 : 2;
  }
  const Json s = read_json_file(summary_path);
  const int64_t steps = s.at("steps").get<int64_t>();
  int64_t ckpts = s.value("checkpoints_evaluated", int64_t{0});
  if (ckpts == 0) ckpts = s.value("checkpoints", int64_t{0});
  if (checkpoints_override >= 0) ckpts = checkpoints_override;
  const CostRow row = estimate_run_cost(steps, ckpts, model, summary_path);
  const auto counting = backward == "all" ? BackwardCounting::all_params : BackwardCounting::trainable_only;
  Json flops = nullptr;
  const int64_t tokens = s.value("tokens_processed", int64_t{0});
  if (tokens > 0) {
    const FlopsEstimate f = estimate_adapter_training_flops(
        s.at("total_params").get<int64_t>(), s.at("trainable_params").get<int64_t>(), tokens, counting);
    flops = {{"trainable_params", f.trainable_params}, {"total_params", f.total_params},
             {"tokens_processed", f.tokens_processed}, {"flops", f.flops}, {"convention", f.convention}};
  }
  std::cout << Json({{"cost",
                      {{"task", row.task},
                       {"training_usd", row.training_usd},
                       {"evaluation_usd", row.evaluation_usd},
                       {"total_usd", row.total_usd}}},
                     {"cost_model",
                      {{"usd_per_gpu_hour", model.usd_per_gpu_hour},
                       {"num_gpus", model.num_gpus},
                       {"step_wall_minutes", model.step_wall_minutes},
                       {"eval_gpu_hours_per_checkpoint", model.eval_gpu_hours_per_checkpoint}}},
                     {"checkpoints_evaluated", ckpts},
                     {"flops", flops}})
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_score(const std::string& in_path, const std::string& rewards, int max_len) {
  const auto specs = parse_reward_list(rewards);
  std::ifstream file;
  std::istream* in = &std::cin;
  if (in_path != "-") {
    file.open(in_path, std::ios::binary);
    if (!file) throw InputError("cannot open " + in_path);
    in = &file;
  }
  std::string line;
  int line_no = 0;
  while (std::getline(*in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      std::cerr << "line " << line_no << ": malformed JSON (" << e.what() << ")\n";
      return 2;
    }
    const bool ok = j.is_object() && j.contains("text") && j["text"].is_string() && j.contains("gold") &&
                    j["gold"].is_string();
    if (!ok) {
      std::cout << Json({{"line", line_no}, {"error", "expected string fields \"text\" and \"gold\""}}).dump()
                << "\n";
      continue;
    }
    const std::string text = j["text"].get<std::string>();
    const std::string gold = j["gold"].get<std::string>();
    const int len = static_cast<int>(std::min<size_t>(text.size(), static_cast<size_t>(max_len)));
    const RewardReport rep = score_completion({text, gold, len, max_len}, specs);
    Json out;
    for (const auto& [kind, v] : rep.scores) out[std::string(to_string(kind))] = v;
    out["total"] = rep.total;
    std::cout << out.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA-GRPO reasoning trainer and analysis tools"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic arithmetic dataset as JSONL");
  uint64_t gen_seed = 0;
  int gen_count = 1000, gen_difficulty = 1;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--count", gen_count, "Number of problems")->check(CLI::PositiveNumber);
  gen->add_option("--difficulty", gen_difficulty, "1, 2 or 3")->check(CLI::Range(1, 3));
  gen->add_option("--out", gen_out, "Output path")->required();

  auto* tr = app.add_subcommand("train", "Run LoRA-GRPO training");
  std::string tr_config, tr_resume, tr_out;
  std::optional<long> tr_stop;
  bool tr_quiet = false;
  tr->add_option("--config", tr_config, "Run config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--stop-at", tr_stop, "Stop after this step");
  tr->add_option("--resume", tr_resume, "Resume from checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--out-dir", tr_out, "Override the config's out_dir");
  tr->add_flag("--quiet", tr_quiet, "No progress output");

  auto* ev = app.add_subcommand("eval", "Zero-shot pass@1 of a checkpoint");
  std::string ev_ckpt, ev_decode = "greedy";
  std::vector<std::string> ev_data;
  uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "JSONL dataset (repeatable)")->required()->check(CLI::ExistingFile);
  ev->add_option("--decode", ev_decode, "greedy or sampled")->check(CLI::IsMember({"greedy", "sampled"}));
  ev->add_option("--seed", ev_seed, "Seed for sampled decoding");

  auto* an = app.add_subcommand("analyze", "Detect the training turning point in a metric log");
  std::string an_log, an_evals, an_plot;
  TransitionParams tp;
  an->add_option("--log", an_log, "metrics.jsonl")->required()->check(CLI::ExistingFile);
  an->add_option("--evals", an_evals, "evals.jsonl with per-checkpoint averages")->check(CLI::ExistingFile);
  an->add_option("--plot", an_plot, "Write an SVG of the three series");
  an->add_option("--ema-factor", tp.ema_factor);
  an->add_option("--window", tp.window);
  an->add_option("--variance-window", tp.variance_window);
  an->add_option("--variance-multiplier", tp.variance_multiplier);
  an->add_option("--min-points", tp.min_points);

  auto* co = app.add_subcommand("cost", "GPU-hour cost and FLOPs of a run");
  std::string co_summary, co_backward = "trainable";
  bool co_verify = false;
  long co_ckpts = -1;
  CostModel cm;
  auto* sum_opt = co->add_option("--run-summary", co_summary, "run_summary.json")->check(CLI::ExistingFile);
  auto* ver_opt = co->add_flag("--verify-paper-table", co_verify, "Check the embedded published cost table");
  sum_opt->excludes(ver_opt);
  co->add_option("--usd-per-gpu-hour", cm.usd_per_gpu_hour);
  co->add_option("--gpus", cm.num_gpus);
  co->add_option("--step-minutes", cm.step_wall_minutes);
  co->add_option("--eval-gpu-hours", cm.eval_gpu_hours_per_checkpoint);
  co->add_option("--checkpoints", co_ckpts, "Override the number of evaluated checkpoints");
  co->add_option("--backward-params", co_backward, "trainable or all")
      ->check(CLI::IsMember({"trainable", "all"}));

  auto* sc = app.add_subcommand("score", "Score {text, gold} JSONL records");
  std::string sc_in = "-";
  std::string sc_rewards = "accuracy,format,length,cosine,tag_count,reasoning_steps,repetition_penalty";
  int sc_max_len = 64;
  sc->add_option("--in", sc_in, "Input JSONL, - for stdin");
  sc->add_option("--rewards", sc_rewards, "kind[:weight],...");
  sc->add_option("--max-len", sc_max_len, "Length budget for length/cosine rewards")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_seed, gen_count, gen_difficulty, gen_out);
    if (*tr) return cmd_train(tr_config, tr_stop, tr_resume, tr_out, tr_quiet);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_decode, ev_seed);
    if (*an) return cmd_analyze(an_log, an_evals, an_plot, tp);
    if (*co) {
      if (!co_verify && co_summary.empty()) {
        std::cerr << "cost: pass --run-summary or --verify-paper-table\n";
        return 1;
      }
      return cmd_cost(co_summary, co_verify, cm, co_backward, co_ckpts);
    }
    if (*sc) return cmd_score(sc_in, sc_rewards, sc_max_len);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

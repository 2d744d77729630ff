#pragma once

// Builds the frozen base model by supervised next-token training on
// synthetic reasoning traces. The corpus deliberately mixes the tagged
// trace format with untagged variants, so the base model already knows the
// arithmetic but usually answers in a format the format/accuracy rewards do
// not accept. Reinforcement learning then only has to teach the structure.

#include <cmath>
#include <string>
#include <vector>

#include "lorarl/error.hpp"
#include "lorarl/optim.hpp"
#include "lorarl/policy.hpp"
#include "lorarl/random.hpp"
#include "lorarl/tasks.hpp"
#include "lorarl/transformer.hpp"

namespace lorarl {

enum class TraceStyle { tagged, think_only, bare };

inline std::string render_trace(const Problem& p, TraceStyle style) {
  const std::string work = p.prompt + "=" + p.gold;
  switch (style) {
    case TraceStyle::tagged: return "<think>" + work + "</think><answer>" + p.gold + "</answer>";
    case TraceStyle::think_only: return "<think>" + work + "</think> " + p.gold;
    case TraceStyle::bare: return work;
  }
  return work;
}

struct BasePretrainConfig {
  int steps = 1500;
  int batch = 16;
  double peak_lr = 3e-3;
  int difficulty = 1;
  // Mixture weights over TraceStyle in the pretraining corpus.
  double tagged_weight = 0.25;
  double think_only_weight = 0.45;
  double bare_weight = 0.30;
  uint64_t seed = 1;

  void validate() const {
    if (steps < 0 || batch < 1) throw ConfigError("base pretraining steps/batch invalid");
    if (!(peak_lr > 0.0)) throw ConfigError("base pretraining lr must be positive");
    if (tagged_weight < 0 || think_only_weight < 0 || bare_weight < 0 ||
        tagged_weight + think_only_weight + bare_weight <= 0) {
      throw ConfigError("base trace-style weights must be nonnegative with positive sum");
    }
  }
};

inline TraceStyle pick_style(Rng& rng, const BasePretrainConfig& c) {
  const double total = c.tagged_weight + c.think_only_weight + c.bare_weight;
  const double u = uniform01(rng) * total;
  if (u < c.tagged_weight) return TraceStyle::tagged;
  if (u < c.tagged_weight + c.think_only_weight) return TraceStyle::think_only;
  return TraceStyle::bare;
}

inline TokenSequence encode_completion(std::string_view text, bool with_eos = true) {
  TokenSequence seq{Tokenizer::encode(text), Role::completion};
  if (with_eos) seq.tokens.push_back(Tokenizer::kEos);
  return seq;
}

// Full-parameter cross-entropy training of freshly initialized base
// weights. Deterministic given the config and model seed.
inline BaseWeights pretrain_base(const ModelConfig& model, const BasePretrainConfig& cfg,
                                 uint64_t model_seed) {
  cfg.validate();
  PolicyParams params{model, init_base(model, model_seed), AdapterSet{}};
  params.adapters.layers.resize(static_cast<size_t>(model.num_layers));
  if (cfg.steps == 0) return params.base;

  ScheduleConfig sched{cfg.peak_lr, 0.1, 0.05, cfg.steps};
  AdamWState opt;
  const AdamWConfig adam{0.9, 0.999, 1e-8, 0.0};
  Rng rng = derive_rng({cfg.seed, 0x9e7ull});
  const ForwardOptions fwd{Mode::eval, 0, false};

  for (int step = 1; step <= cfg.steps; ++step) {
    PolicyGrads grads = PolicyGrads::zeros(params, true);
    double tokens = 0.0;
    std::vector<std::pair<TokenSequence, TokenSequence>> batch;
    for (int b = 0; b < cfg.batch; ++b) {
      const Problem p = make_arithmetic_problem(rng, cfg.difficulty);
      const TraceStyle style = pick_style(rng, cfg);
      batch.emplace_back(encode_prompt(p.prompt), encode_completion(render_trace(p, style)));
      tokens += static_cast<double>(batch.back().second.size());
    }
    for (const auto& [prompt, completion] : batch) {
      const ForwardResult fr = forward(params, prompt, completion, fwd);
      // Minimizing mean token NLL: d loss / d logp = -1 / tokens.
      backward(params, fr.tape, std::vector<double>(fr.logp.size(), -1.0 / tokens), grads);
    }
    adamw_step(named_tensors(params.base), named_tensors(*grads.base), opt, lr_at(step, sched), adam);
  }
  return params.base;
}

}  // namespace lorarl

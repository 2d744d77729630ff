#pragma once

// Autoregressive decoding with per-layer key/value caches. Always runs the
// policy in eval mode; the returned trace holds temperature-1 log-probs,
// i.e. log pi(token | prefix) under the parameters used for sampling.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lorarl/policy.hpp"
#include "lorarl/transformer.hpp"

namespace lorarl {

struct SamplingOptions {
  double temperature = 1.0;
  double top_p = 1.0;
  bool greedy = false;
  int max_len = 0;
  uint64_t seed = 0;
};

struct SampledCompletion {
  TokenSequence completion;
  std::vector<double> logp;
};

class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const PolicyParams& params) : params_(params) {
    const auto& cfg = params.config;
    keys_.assign(static_cast<size_t>(cfg.num_layers), MatrixXd(cfg.max_positions(), cfg.embed_dim));
    values_ = keys_;
  }

  int position() const { return pos_; }

  // Feeds one token and returns the logits for the next position.
  VectorXd step(int token) {
    const ModelConfig& cfg = params_.config;
    if (pos_ >= cfg.max_positions()) throw InputError("decoder ran past max positions");
    const int d = cfg.embed_dim;
    const int dh = cfg.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    detail::LinearCache scratch;
    detail::LayerNormCache ln;

    MatrixXd x = params_.base.token_embedding.row(token) + params_.base.position_embedding.row(pos_);
    for (int l = 0; l < cfg.num_layers; ++l) {
      const BlockWeights& w = params_.base.blocks[static_cast<size_t>(l)];
      auto adapter = [&](MatrixKind k) { return params_.adapters.find(static_cast<size_t>(l), k); };
      const MatrixXd h1 = detail::layer_norm_forward(x, w.ln1_gain, w.ln1_bias, ln);
      const MatrixXd q = detail::linear_forward(h1, w.attn[0], adapter(MatrixKind::query), scratch, nullptr);
      keys_[static_cast<size_t>(l)].row(pos_) =
          detail::linear_forward(h1, w.attn[1], adapter(MatrixKind::key), scratch, nullptr);
      values_[static_cast<size_t>(l)].row(pos_) =
          detail::linear_forward(h1, w.attn[2], adapter(MatrixKind::value), scratch, nullptr);
      const auto kc = keys_[static_cast<size_t>(l)].topRows(pos_ + 1);
      const auto vc = values_[static_cast<size_t>(l)].topRows(pos_ + 1);
      MatrixXd att(1, d);
      for (int h = 0; h < cfg.num_heads; ++h) {
        VectorXd s = (kc.middleCols(h * dh, dh) * q.middleCols(h * dh, dh).transpose()) * attn_scale;
        const double mx = s.maxCoeff();
        VectorXd p = (s.array() - mx).exp().matrix();
        p /= p.sum();
        att.middleCols(h * dh, dh) = p.transpose() * vc.middleCols(h * dh, dh);
      }
      x += detail::linear_forward(att, w.attn[3], adapter(MatrixKind::dense), scratch, nullptr);
      const MatrixXd h2 = detail::layer_norm_forward(x, w.ln2_gain, w.ln2_bias, ln);
      MatrixXd z = h2 * w.mlp_in.transpose() + w.mlp_in_bias;
      z = z.unaryExpr([](double v) { return detail::gelu(v); });
      x += z * w.mlp_out.transpose() + w.mlp_out_bias;
    }
    const MatrixXd hf = detail::layer_norm_forward(x, params_.base.final_gain, params_.base.final_bias, ln);
    ++pos_;
    return (hf * params_.base.head.transpose()).row(0).transpose();
  }

 private:
  const PolicyParams& params_;
  std::vector<MatrixXd> keys_;
  std::vector<MatrixXd> values_;
  int pos_ = 0;
};

namespace detail {

inline VectorXd log_softmax(const VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return (logits.array() - lse).matrix();
}

inline int argmax_earliest(const VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline int sample_token(const VectorXd& logits, double temperature, double top_p, Rng& rng) {
  const VectorXd lp = log_softmax(logits / temperature);
  std::vector<int> order(static_cast<size_t>(lp.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lp[a] > lp[b]; });
  std::vector<double> probs;
  double cum = 0.0;
  for (int id : order) {
    const double p = std::exp(lp[id]);
    probs.push_back(p);
    cum += p;
    if (cum >= top_p) break;
  }
  const double u = uniform01(rng) * cum;
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return order[i];
  }
  return order[probs.size() - 1];
}

}  // namespace detail

inline SampledCompletion sample_completion(const PolicyParams& params, const TokenSequence& prompt,
                                           const SamplingOptions& opts) {
  const ModelConfig& cfg = params.config;
  if (!opts.greedy && !(opts.temperature > 0.0)) throw InputError("temperature must be positive");
  if (!(opts.top_p > 0.0 && opts.top_p <= 1.0)) throw InputError("top_p must be in (0,1]");
  if (opts.max_len < 0 || opts.max_len > cfg.max_completion_len) {
    throw InputError("max_len must be in [0, max_completion_len]");
  }
  validate_sequences(cfg, prompt, TokenSequence{});

  SampledCompletion out;
  out.completion.role = Role::completion;
  if (opts.max_len == 0) return out;

  IncrementalDecoder dec(params);
  VectorXd logits;
  for (int id : prompt.tokens) logits = dec.step(id);

  Rng rng = derive_rng({opts.seed, 0x5a3bull});
  for (int n = 0; n < opts.max_len; ++n) {
    const int tok = opts.greedy ? detail::argmax_earliest(logits)
                                : detail::sample_token(logits, opts.temperature, opts.top_p, rng);
    out.completion.tokens.push_back(tok);
    out.logp.push_back(detail::log_softmax(logits)[tok]);
    if (tok == Tokenizer::kEos || n + 1 == opts.max_len) break;
    logits = dec.step(tok);
  }
  return out;
}

}  // namespace lorarl

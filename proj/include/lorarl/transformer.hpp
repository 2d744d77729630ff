#pragma once

// Teacher-forced forward pass of the policy over prompt + completion with a
// hand-written reverse pass. Gradients reach the adapters always and the
// base weights only when the caller asks for them (supervised base
// pretraining).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "lorarl/error.hpp"
#include "lorarl/policy.hpp"
#include "lorarl/random.hpp"

namespace lorarl {

struct ForwardOptions {
  Mode mode = Mode::eval;
  uint64_t dropout_seed = 0;
  // false evaluates the pure base model (the reference policy).
  bool use_adapters = true;
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  MatrixXd xhat;
  VectorXd rstd;
};

inline MatrixXd layer_norm_forward(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias,
                                   LayerNormCache& cache) {
  const Eigen::Index rows = x.rows();
  const double d = static_cast<double>(x.cols());
  cache.xhat.resize(rows, x.cols());
  cache.rstd.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mu = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mu).square().sum() / d;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mu) * rstd;
  }
  MatrixXd y = cache.xhat;
  y.array().rowwise() *= gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

inline MatrixXd layer_norm_backward(const MatrixXd& dy, const MatrixXd& gain,
                                    const LayerNormCache& cache, MatrixXd* dgain,
                                    MatrixXd* dbias) {
  if (dgain) dgain->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) dbias->row(0) += dy.colwise().sum();
  MatrixXd dxhat = dy;
  dxhat.array().rowwise() *= gain.row(0).array();
  const double d = static_cast<double>(dy.cols());
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).sum() / d;
    const double m2 = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.rstd[i] * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double z) {
  return 0.5 * z * (1.0 + std::tanh(kGeluC * (z + 0.044715 * z * z * z)));
}

inline double gelu_grad(double z) {
  const double t = std::tanh(kGeluC * (z + 0.044715 * z * z * z));
  return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * z * z);
}

struct LinearCache {
  MatrixXd mask;     // empty unless dropout was applied
  MatrixXd dropped;  // adapter input after dropout
  MatrixXd mid;      // dropped * B^T, T x r
};

inline MatrixXd linear_forward(const MatrixXd& in, const MatrixXd& w0, const LoraAdapter* ad,
                               LinearCache& cache, Rng* dropout_rng) {
  MatrixXd out = in * w0.transpose();
  if (ad == nullptr) return out;
  if (dropout_rng != nullptr && ad->dropout_p > 0.0) {
    const double keep = 1.0 - ad->dropout_p;
    cache.mask.resize(in.rows(), in.cols());
    for (Eigen::Index j = 0; j < in.cols(); ++j)
      for (Eigen::Index i = 0; i < in.rows(); ++i)
        cache.mask(i, j) = uniform01(*dropout_rng) < keep ? 1.0 / keep : 0.0;
    cache.dropped = in.cwiseProduct(cache.mask);
  } else {
    cache.dropped = in;
  }
  cache.mid = cache.dropped * ad->b.transpose();
  out.noalias() += ad->scale() * (cache.mid * ad->a.transpose());
  return out;
}

inline MatrixXd linear_backward(const MatrixXd& dout, const MatrixXd& in, const MatrixXd& w0,
                                const LoraAdapter* ad, const LinearCache& cache, MatrixXd* dw0,
                                LoraAdapter* dad) {
  MatrixXd din = dout * w0;
  if (dw0) dw0->noalias() += dout.transpose() * in;
  if (ad != nullptr) {
    const double s = ad->scale();
    const MatrixXd du = s * (dout * ad->a);
    if (dad) {
      dad->a.noalias() += s * (dout.transpose() * cache.mid);
      dad->b.noalias() += du.transpose() * cache.dropped;
    }
    MatrixXd back = du * ad->b;
    if (cache.mask.size() > 0) back = back.cwiseProduct(cache.mask);
    din += back;
  }
  return din;
}

struct BlockTape {
  MatrixXd x_in;
  LayerNormCache ln1;
  MatrixXd h1;
  std::array<LinearCache, 4> lin;
  MatrixXd q, k, v;
  std::vector<MatrixXd> probs;  // per head, T x T, lower triangular
  MatrixXd att;
  MatrixXd x_mid;
  LayerNormCache ln2;
  MatrixXd h2, z, act;
};

}  // namespace detail

struct ForwardTape {
  std::vector<int> ids;
  int prompt_len = 0;  // includes the BOS marker
  ForwardOptions options;
  std::vector<detail::BlockTape> blocks;
  MatrixXd final_rows;  // residual rows that predict completion tokens
  detail::LayerNormCache lnf;
  MatrixXd hidden;  // normalized final rows, C x D
  MatrixXd probs;   // next-token distributions, C x V
};

struct ForwardResult {
  std::vector<double> logp;  // one entry per completion token
  ForwardTape tape;
};

inline void validate_sequences(const ModelConfig& config, const TokenSequence& prompt,
                               const TokenSequence& completion) {
  if (prompt.empty()) throw InputError("prompt must contain at least the BOS token");
  if (prompt.size() > config.max_prompt_len) {
    throw InputError("prompt length " + std::to_string(prompt.size()) + " exceeds max_prompt_len " +
                     std::to_string(config.max_prompt_len));
  }
  if (completion.size() > config.max_completion_len) {
    throw InputError("completion length " + std::to_string(completion.size()) +
                     " exceeds max_completion_len " + std::to_string(config.max_completion_len));
  }
  auto check = [&](const TokenSequence& s, const char* what) {
    for (int id : s.tokens) {
      if (id < 0 || id >= config.vocab_size) {
        throw InputError(std::string(what) + " token id " + std::to_string(id) +
                         " outside vocabulary of size " + std::to_string(config.vocab_size));
      }
    }
  };
  check(prompt, "prompt");
  check(completion, "completion");
}

inline ForwardResult forward(const PolicyParams& params, const TokenSequence& prompt,
                             const TokenSequence& completion, const ForwardOptions& options = {}) {
  const ModelConfig& cfg = params.config;
  validate_sequences(cfg, prompt, completion);

  ForwardResult result;
  ForwardTape& tape = result.tape;
  tape.options = options;
  tape.prompt_len = prompt.size();
  tape.ids = prompt.tokens;
  tape.ids.insert(tape.ids.end(), completion.tokens.begin(), completion.tokens.end());
  const int n_out = completion.size();
  if (n_out == 0) return result;

  // The final token never predicts anything, so it is not fed through.
  const int t_len = static_cast<int>(tape.ids.size()) - 1;
  const int d = cfg.embed_dim;
  const int dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd x(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    x.row(t) = params.base.token_embedding.row(tape.ids[static_cast<size_t>(t)]) +
               params.base.position_embedding.row(t);
  }

  std::optional<Rng> dropout_rng;
  if (options.mode == Mode::train) dropout_rng = derive_rng({options.dropout_seed, 0xd509ull});
  Rng* drng = dropout_rng ? &*dropout_rng : nullptr;

  tape.blocks.resize(static_cast<size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    const BlockWeights& w = params.base.blocks[static_cast<size_t>(l)];
    detail::BlockTape& bt = tape.blocks[static_cast<size_t>(l)];
    auto adapter = [&](MatrixKind k) -> const LoraAdapter* {
      return options.use_adapters ? params.adapters.find(static_cast<size_t>(l), k) : nullptr;
    };
    bt.x_in = x;
    bt.h1 = detail::layer_norm_forward(x, w.ln1_gain, w.ln1_bias, bt.ln1);
    bt.q = detail::linear_forward(bt.h1, w.attn[0], adapter(MatrixKind::query), bt.lin[0], drng);
    bt.k = detail::linear_forward(bt.h1, w.attn[1], adapter(MatrixKind::key), bt.lin[1], drng);
    bt.v = detail::linear_forward(bt.h1, w.attn[2], adapter(MatrixKind::value), bt.lin[2], drng);

    bt.att.resize(t_len, d);
    bt.probs.resize(static_cast<size_t>(cfg.num_heads));
    for (int h = 0; h < cfg.num_heads; ++h) {
      MatrixXd scores = bt.q.middleCols(h * dh, dh) * bt.k.middleCols(h * dh, dh).transpose();
      MatrixXd& p = bt.probs[static_cast<size_t>(h)];
      p = MatrixXd::Zero(t_len, t_len);
      for (int i = 0; i < t_len; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j) * attn_scale);
        double sum = 0.0;
        for (int j = 0; j <= i; ++j) {
          p(i, j) = std::exp(scores(i, j) * attn_scale - mx);
          sum += p(i, j);
        }
        p.row(i).head(i + 1) /= sum;
      }
      bt.att.middleCols(h * dh, dh) = p * bt.v.middleCols(h * dh, dh);
    }
    x = bt.x_in + detail::linear_forward(bt.att, w.attn[3], adapter(MatrixKind::dense), bt.lin[3], drng);
    bt.x_mid = x;

    bt.h2 = detail::layer_norm_forward(x, w.ln2_gain, w.ln2_bias, bt.ln2);
    bt.z = bt.h2 * w.mlp_in.transpose();
    bt.z.rowwise() += w.mlp_in_bias.row(0);
    bt.act = bt.z.unaryExpr([](double v) { return detail::gelu(v); });
    MatrixXd m = bt.act * w.mlp_out.transpose();
    m.rowwise() += w.mlp_out_bias.row(0);
    x += m;
  }

  const int first = tape.prompt_len - 1;
  tape.final_rows = x.middleRows(first, n_out);
  tape.hidden = detail::layer_norm_forward(tape.final_rows, params.base.final_gain,
                                           params.base.final_bias, tape.lnf);
  MatrixXd logits = tape.hidden * params.base.head.transpose();
  tape.probs.resize(n_out, cfg.vocab_size);
  result.logp.resize(static_cast<size_t>(n_out));
  for (int r = 0; r < n_out; ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    tape.probs.row(r) = (logits.row(r).array() - lse).exp().matrix();
    result.logp[static_cast<size_t>(r)] = logits(r, completion.tokens[static_cast<size_t>(r)]) - lse;
  }
  return result;
}

// Accumulates d(sum_r dlogp[r] * logp[r]) into grads.
inline void backward(const PolicyParams& params, const ForwardTape& tape,
                     const std::vector<double>& dlogp, PolicyGrads& grads) {
  const ModelConfig& cfg = params.config;
  const int n_out = static_cast<int>(tape.hidden.rows());
  if (static_cast<int>(dlogp.size()) != n_out) {
    throw DimensionError("backward: dlogp has " + std::to_string(dlogp.size()) +
                         " entries, forward produced " + std::to_string(n_out));
  }
  if (n_out == 0) return;
  BaseWeights* gb = grads.base ? &*grads.base : nullptr;

  const int t_len = static_cast<int>(tape.ids.size()) - 1;
  const int d = cfg.embed_dim;
  const int dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int first = tape.prompt_len - 1;

  MatrixXd dlogits = -tape.probs;
  for (int r = 0; r < n_out; ++r) {
    const int target = tape.ids[static_cast<size_t>(first + r + 1)];
    dlogits(r, target) += 1.0;
    dlogits.row(r) *= dlogp[static_cast<size_t>(r)];
  }
  if (gb) gb->head.noalias() += dlogits.transpose() * tape.hidden;
  const MatrixXd dhidden = dlogits * params.base.head;
  const MatrixXd drows = detail::layer_norm_backward(dhidden, params.base.final_gain, tape.lnf,
                                                     gb ? &gb->final_gain : nullptr,
                                                     gb ? &gb->final_bias : nullptr);
  MatrixXd dx = MatrixXd::Zero(t_len, d);
  dx.middleRows(first, n_out) = drows;

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const BlockWeights& w = params.base.blocks[static_cast<size_t>(l)];
    const detail::BlockTape& bt = tape.blocks[static_cast<size_t>(l)];
    BlockWeights* gw = gb ? &gb->blocks[static_cast<size_t>(l)] : nullptr;
    auto adapter = [&](MatrixKind k) -> const LoraAdapter* {
      return tape.options.use_adapters ? params.adapters.find(static_cast<size_t>(l), k) : nullptr;
    };
    auto dadapter = [&](MatrixKind k) -> LoraAdapter* {
      auto& slot = grads.adapters.layers[static_cast<size_t>(l)][static_cast<size_t>(k)];
      return slot ? &*slot : nullptr;
    };

    // MLP residual branch.
    const MatrixXd dm = dx;
    if (gw) {
      gw->mlp_out.noalias() += dm.transpose() * bt.act;
      gw->mlp_out_bias.row(0) += dm.colwise().sum();
    }
    MatrixXd dz = dm * w.mlp_out;
    dz = dz.cwiseProduct(bt.z.unaryExpr([](double v) { return detail::gelu_grad(v); }));
    if (gw) {
      gw->mlp_in.noalias() += dz.transpose() * bt.h2;
      gw->mlp_in_bias.row(0) += dz.colwise().sum();
    }
    const MatrixXd dh2 = dz * w.mlp_in;
    dx += detail::layer_norm_backward(dh2, w.ln2_gain, bt.ln2, gw ? &gw->ln2_gain : nullptr,
                                      gw ? &gw->ln2_bias : nullptr);

    // Attention residual branch.
    const MatrixXd datt = detail::linear_backward(dx, bt.att, w.attn[3], adapter(MatrixKind::dense),
                                                  bt.lin[3], gw ? &gw->attn[3] : nullptr,
                                                  dadapter(MatrixKind::dense));
    MatrixXd dq = MatrixXd::Zero(t_len, d);
    MatrixXd dk = MatrixXd::Zero(t_len, d);
    MatrixXd dv = MatrixXd::Zero(t_len, d);
    for (int h = 0; h < cfg.num_heads; ++h) {
      const MatrixXd& p = bt.probs[static_cast<size_t>(h)];
      const auto datt_h = datt.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * datt_h;
      const MatrixXd dp = datt_h * bt.v.middleCols(h * dh, dh).transpose();
      MatrixXd ds = p.cwiseProduct(dp);
      const VectorXd rowdot = ds.rowwise().sum();
      ds -= (p.array().colwise() * rowdot.array()).matrix();
      ds *= attn_scale;
      dq.middleCols(h * dh, dh).noalias() = ds * bt.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * bt.q.middleCols(h * dh, dh);
    }
    MatrixXd dh1 = detail::linear_backward(dq, bt.h1, w.attn[0], adapter(MatrixKind::query),
                                           bt.lin[0], gw ? &gw->attn[0] : nullptr,
                                           dadapter(MatrixKind::query));
    dh1 += detail::linear_backward(dk, bt.h1, w.attn[1], adapter(MatrixKind::key), bt.lin[1],
                                   gw ? &gw->attn[1] : nullptr, dadapter(MatrixKind::key));
    dh1 += detail::linear_backward(dv, bt.h1, w.attn[2], adapter(MatrixKind::value), bt.lin[2],
                                   gw ? &gw->attn[2] : nullptr, dadapter(MatrixKind::value));
    dx += detail::layer_norm_backward(dh1, w.ln1_gain, bt.ln1, gw ? &gw->ln1_gain : nullptr,
                                      gw ? &gw->ln1_bias : nullptr);
  }

  if (gb) {
    for (int t = 0; t < t_len; ++t) {
      gb->token_embedding.row(tape.ids[static_cast<size_t>(t)]) += dx.row(t);
      gb->position_embedding.row(t) += dx.row(t);
    }
  }
}

// Per-token log-probabilities of `completion` given `prompt`.
inline std::vector<double> logprobs(const PolicyParams& params, const TokenSequence& prompt,
                                    const TokenSequence& completion,
                                    const ForwardOptions& options = {}) {
  return forward(params, prompt, completion, options).logp;
}

}  // namespace lorarl

#pragma once

// Parameter containers for the tiny autoregressive policy: model
// configuration, frozen base weights and the low-rank adapters that are the
// only trainable state during reinforcement learning.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorarl/error.hpp"
#include "lorarl/random.hpp"
#include "lorarl/tokenizer.hpp"

namespace lorarl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class MatrixKind { query = 0, key = 1, value = 2, dense = 3 };

inline constexpr std::array<MatrixKind, 4> kAllMatrixKinds = {
    MatrixKind::query, MatrixKind::key, MatrixKind::value, MatrixKind::dense};

inline std::string_view to_string(MatrixKind kind) {
  switch (kind) {
    case MatrixKind::query: return "query";
    case MatrixKind::key: return "key";
    case MatrixKind::value: return "value";
    case MatrixKind::dense: return "dense";
  }
  return "?";
}

inline MatrixKind matrix_kind_from_string(std::string_view s) {
  for (MatrixKind k : kAllMatrixKinds) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown matrix kind: " + std::string(s));
}

enum class Mode { train, eval };

struct ModelConfig {
  int vocab_size = Tokenizer::size();
  int embed_dim = 32;
  int num_layers = 2;
  int num_heads = 2;
  int mlp_hidden = 128;
  int max_prompt_len = 24;
  int max_completion_len = 64;
  // "dense" is the attention output projection.
  std::set<MatrixKind> adapted_matrix_kinds{kAllMatrixKinds.begin(), kAllMatrixKinds.end()};

  int max_positions() const { return max_prompt_len + max_completion_len; }
  int head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    if (vocab_size < 3) throw ConfigError("vocab_size must be at least 3");
    if (embed_dim <= 0 || num_layers <= 0 || num_heads <= 0 || mlp_hidden <= 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (embed_dim % num_heads != 0) {
      throw ConfigError("embed_dim must be divisible by num_heads");
    }
    if (max_prompt_len <= 0 || max_completion_len <= 0) {
      throw ConfigError("max_prompt_len and max_completion_len must be positive");
    }
    if (adapted_matrix_kinds.empty()) {
      throw ConfigError("adapted_matrix_kinds must not be empty");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Role { prompt, completion };

struct TokenSequence {
  std::vector<int> tokens;
  Role role = Role::completion;

  int size() const { return static_cast<int>(tokens.size()); }
  bool empty() const { return tokens.empty(); }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Prompt sequences always start with the beginning-of-sequence marker.
inline TokenSequence encode_prompt(std::string_view text) {
  TokenSequence seq{{Tokenizer::kBos}, Role::prompt};
  for (char c : text) seq.tokens.push_back(Tokenizer::encode_char(c));
  return seq;
}

// Trainable low-rank pair: out += (alpha / rank) * A * (B * x).
// A is d x r, B is r x k.
struct LoraAdapter {
  MatrixXd a;
  MatrixXd b;
  int rank = 1;
  double alpha = 1.0;
  double dropout_p = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }
};

inline VectorXd lora_forward(const MatrixXd& w0, const LoraAdapter& adapter, const VectorXd& x,
                             Mode mode = Mode::eval, Rng* rng = nullptr) {
  if (x.size() != w0.cols()) {
    throw DimensionError("lora_forward: operand x has " + std::to_string(x.size()) +
                         " entries, W0 expects " + std::to_string(w0.cols()));
  }
  if (adapter.a.rows() != w0.rows() || adapter.a.cols() != adapter.rank) {
    throw DimensionError("lora_forward: operand A is " + std::to_string(adapter.a.rows()) + "x" +
                         std::to_string(adapter.a.cols()) + ", expected " +
                         std::to_string(w0.rows()) + "x" + std::to_string(adapter.rank));
  }
  if (adapter.b.rows() != adapter.rank || adapter.b.cols() != w0.cols()) {
    throw DimensionError("lora_forward: operand B is " + std::to_string(adapter.b.rows()) + "x" +
                         std::to_string(adapter.b.cols()) + ", expected " +
                         std::to_string(adapter.rank) + "x" + std::to_string(w0.cols()));
  }
  VectorXd dropped = x;
  if (mode == Mode::train && adapter.dropout_p > 0.0) {
    if (rng == nullptr) throw InputError("lora_forward: training-mode dropout needs an rng");
    const double keep = 1.0 - adapter.dropout_p;
    for (Eigen::Index i = 0; i < dropped.size(); ++i) {
      dropped[i] = uniform01(*rng) < keep ? dropped[i] / keep : 0.0;
    }
  }
  VectorXd out = w0 * x;
  out += adapter.scale() * (adapter.a * (adapter.b * dropped));
  return out;
}

struct BlockWeights {
  MatrixXd ln1_gain, ln1_bias;  // 1 x D
  std::array<MatrixXd, 4> attn;  // indexed by MatrixKind, each D x D
  MatrixXd ln2_gain, ln2_bias;  // 1 x D
  MatrixXd mlp_in;               // F x D
  MatrixXd mlp_in_bias;          // 1 x F
  MatrixXd mlp_out;              // D x F
  MatrixXd mlp_out_bias;         // 1 x D
};

struct BaseWeights {
  MatrixXd token_embedding;     // V x D
  MatrixXd position_embedding;  // P x D
  std::vector<BlockWeights> blocks;
  MatrixXd final_gain, final_bias;  // 1 x D
  MatrixXd head;                    // V x D

  // Visits every tensor in a fixed order with a stable name.
  template <class Self, class F>
  static void visit(Self& w, F&& f) {
    f(std::string("token_embedding"), w.token_embedding);
    f(std::string("position_embedding"), w.position_embedding);
    for (size_t l = 0; l < w.blocks.size(); ++l) {
      auto& b = w.blocks[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1_gain", b.ln1_gain);
      f(p + "ln1_bias", b.ln1_bias);
      for (MatrixKind k : kAllMatrixKinds) {
        f(p + std::string(to_string(k)), b.attn[static_cast<size_t>(k)]);
      }
      f(p + "ln2_gain", b.ln2_gain);
      f(p + "ln2_bias", b.ln2_bias);
      f(p + "mlp_in", b.mlp_in);
      f(p + "mlp_in_bias", b.mlp_in_bias);
      f(p + "mlp_out", b.mlp_out);
      f(p + "mlp_out_bias", b.mlp_out_bias);
    }
    f(std::string("final_gain"), w.final_gain);
    f(std::string("final_bias"), w.final_bias);
    f(std::string("head"), w.head);
  }

  template <class F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }
};

struct AdapterSet {
  // layers[l][kind] is present iff that matrix is adapted.
  std::vector<std::array<std::optional<LoraAdapter>, 4>> layers;

  const LoraAdapter* find(size_t layer, MatrixKind kind) const {
    const auto& slot = layers[layer][static_cast<size_t>(kind)];
    return slot ? &*slot : nullptr;
  }

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    for (size_t l = 0; l < s.layers.size(); ++l) {
      for (MatrixKind k : kAllMatrixKinds) {
        auto& slot = s.layers[l][static_cast<size_t>(k)];
        if (!slot) continue;
        const std::string p = "layers." + std::to_string(l) + "." + std::string(to_string(k));
        f(p + ".lora_A", slot->a);
        f(p + ".lora_B", slot->b);
      }
    }
  }

  template <class F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <class F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  size_t parameter_count() const {
    size_t n = 0;
    for_each([&](const std::string&, const MatrixXd& m) { n += static_cast<size_t>(m.size()); });
    return n;
  }
};

struct LoraConfig {
  int rank = 32;
  double alpha = 128.0;
  double dropout = 0.05;

  void validate() const {
    if (rank < 1) throw ConfigError("lora rank must be at least 1");
    if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora dropout must be in [0,1)");
  }

  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

struct PolicyParams {
  ModelConfig config;
  BaseWeights base;
  AdapterSet adapters;

  size_t base_parameter_count() const {
    size_t n = 0;
    base.for_each([&](const std::string&, const MatrixXd& m) { n += static_cast<size_t>(m.size()); });
    return n;
  }
  size_t total_parameter_count() const {
    return base_parameter_count() + adapters.parameter_count();
  }
};

inline BaseWeights init_base(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng = derive_rng({seed, 0xba5eull});
  const int d = config.embed_dim;
  const int f = config.mlp_hidden;
  auto fill = [&](int rows, int cols, double bound) {
    MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform(rng, -bound, bound);
    return m;
  };
  BaseWeights w;
  w.token_embedding = fill(config.vocab_size, d, 1.0);
  w.position_embedding = fill(config.max_positions(), d, 0.3);
  w.blocks.resize(static_cast<size_t>(config.num_layers));
  for (auto& b : w.blocks) {
    b.ln1_gain = MatrixXd::Ones(1, d);
    b.ln1_bias = MatrixXd::Zero(1, d);
    for (auto& m : b.attn) m = fill(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    b.ln2_gain = MatrixXd::Ones(1, d);
    b.ln2_bias = MatrixXd::Zero(1, d);
    b.mlp_in = fill(f, d, 1.0 / std::sqrt(static_cast<double>(d)));
    b.mlp_in_bias = MatrixXd::Zero(1, f);
    b.mlp_out = fill(d, f, 1.0 / std::sqrt(static_cast<double>(f)));
    b.mlp_out_bias = MatrixXd::Zero(1, d);
  }
  w.final_gain = MatrixXd::Ones(1, d);
  w.final_bias = MatrixXd::Zero(1, d);
  w.head = fill(config.vocab_size, d, 1.0 / std::sqrt(static_cast<double>(d)));
  return w;
}

// A ~ U[-1/sqrt(d), 1/sqrt(d)] with d the output dimension, B = 0, so the
// adapted map starts out identical to the base map.
inline AdapterSet init_adapters(const ModelConfig& config, const LoraConfig& lora, uint64_t seed) {
  config.validate();
  lora.validate();
  const int d = config.embed_dim;
  if (lora.rank > d) {
    throw ConfigError("lora rank " + std::to_string(lora.rank) + " exceeds min(d,k) = " +
                      std::to_string(d));
  }
  Rng rng = derive_rng({seed, 0xada9ull});
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  AdapterSet set;
  set.layers.resize(static_cast<size_t>(config.num_layers));
  for (auto& layer : set.layers) {
    for (MatrixKind k : kAllMatrixKinds) {
      if (!config.adapted_matrix_kinds.contains(k)) continue;
      LoraAdapter ad;
      ad.rank = lora.rank;
      ad.alpha = lora.alpha;
      ad.dropout_p = lora.dropout;
      ad.a.resize(d, lora.rank);
      for (Eigen::Index j = 0; j < ad.a.cols(); ++j)
        for (Eigen::Index i = 0; i < ad.a.rows(); ++i) ad.a(i, j) = uniform(rng, -bound, bound);
      ad.b = MatrixXd::Zero(lora.rank, d);
      layer[static_cast<size_t>(k)] = std::move(ad);
    }
  }
  return set;
}

inline PolicyParams make_policy(const ModelConfig& config, const LoraConfig& lora,
                                uint64_t base_seed, uint64_t adapter_seed) {
  return PolicyParams{config, init_base(config, base_seed), init_adapters(config, lora, adapter_seed)};
}

// Same shapes as the source, all zeros. Used for gradient accumulators.
inline AdapterSet zeros_like(const AdapterSet& s) {
  AdapterSet z = s;
  z.for_each([](const std::string&, MatrixXd& m) { m.setZero(); });
  return z;
}

inline BaseWeights zeros_like(const BaseWeights& w) {
  BaseWeights z = w;
  z.for_each([](const std::string&, MatrixXd& m) { m.setZero(); });
  return z;
}

struct PolicyGrads {
  AdapterSet adapters;
  std::optional<BaseWeights> base;  // only filled when base gradients are requested

  static PolicyGrads zeros(const PolicyParams& p, bool with_base) {
    PolicyGrads g;
    g.adapters = zeros_like(p.adapters);
    if (with_base) g.base = zeros_like(p.base);
    return g;
  }

  void scale(double s) {
    adapters.for_each([&](const std::string&, MatrixXd& m) { m *= s; });
    if (base) base->for_each([&](const std::string&, MatrixXd& m) { m *= s; });
  }
};

// Collects (name, tensor*) pairs so two structurally identical sets can be
// walked in lockstep.
template <class Set>
std::vector<std::pair<std::string, MatrixXd*>> named_tensors(Set& s) {
  std::vector<std::pair<std::string, MatrixXd*>> out;
  s.for_each([&](const std::string& name, MatrixXd& m) { out.emplace_back(name, &m); });
  return out;
}

}  // namespace lorarl

#include <catch_amalgamated.hpp>

#include <cmath>

#include "lorarl/grpo.hpp"
#include "lorarl/policy.hpp"
#include "lorarl/sampler.hpp"
#include "lorarl/transformer.hpp"

using namespace lorarl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

GrpoConfig grpo_cfg(GrpoVariant v = GrpoVariant::grpo) {
  GrpoConfig c;
  c.variant = v;
  return c;
}

PolicyParams small_policy(uint64_t seed) {
  ModelConfig c;
  c.embed_dim = 16;
  c.mlp_hidden = 32;
  c.max_completion_len = 16;
  PolicyParams p = make_policy(c, LoraConfig{2, 8.0, 0.0}, seed, seed + 1);
  Rng r = derive_rng({seed, 77});
  p.adapters.for_each([&](const std::string&, MatrixXd& m) {
    for (auto& x : m.reshaped()) x = uniform(r, -0.2, 0.2);
  });
  return p;
}

struct Fixture {
  TokenSequence prompt;
  std::vector<TokenSequence> completions;
  RolloutGroup group;
};

// Rollouts sampled from p; old = p, reference = p without adapters.
Fixture make_fixture(const PolicyParams& p, std::vector<double> rewards, uint64_t seed) {
  Fixture f;
  f.prompt = encode_prompt("4*5");
  for (size_t i = 0; i < rewards.size(); ++i) {
    auto s = sample_completion(p, f.prompt, {1.0, 1.0, false, 10, seed + i});
    if (s.completion.tokens.empty()) s.completion.tokens.push_back(5);
    f.group.completions.push_back(s.completion.tokens);
    f.group.logp_old.push_back(logprobs(p, f.prompt, s.completion));
    f.group.logp_ref.push_back(logprobs(p, f.prompt, s.completion, {Mode::eval, 0, false}));
    f.completions.push_back(s.completion);
  }
  f.group.rewards = std::move(rewards);
  return f;
}

GrpoLoss eval_loss(const PolicyParams& p, Fixture& f, const AdvantageVector& adv, const GrpoConfig& cfg) {
  f.group.logp_new.clear();
  for (const auto& c : f.completions) f.group.logp_new.push_back(logprobs(p, f.prompt, c));
  return grpo_loss(f.group, adv, cfg);
}

PolicyGrads loss_grads(const PolicyParams& p, Fixture& f, const AdvantageVector& adv, const GrpoConfig& cfg) {
  f.group.logp_new.clear();
  std::vector<ForwardResult> frs;
  for (const auto& c : f.completions) {
    frs.push_back(forward(p, f.prompt, c));
    f.group.logp_new.push_back(frs.back().logp);
  }
  const GrpoLoss l = grpo_loss(f.group, adv, cfg);
  PolicyGrads g = PolicyGrads::zeros(p, false);
  for (size_t i = 0; i < frs.size(); ++i) backward(p, frs[i].tape, l.dlogp_new[i], g);
  return g;
}

}  // namespace

TEST_CASE("group advantages: hand examples") {
  const auto a = group_advantages({1, 0, 0, 1}, grpo_cfg());
  REQUIRE(a.values == std::vector<double>{1, -1, -1, 1});
  const auto d = group_advantages({1, 0, 0, 1}, grpo_cfg(GrpoVariant::dr_grpo));
  REQUIRE(d.values == std::vector<double>{0.5, -0.5, -0.5, 0.5});
  for (double c : {0.0, 1.0, -3.5, 1e6}) {
    for (double v : group_advantages({c, c, c, c}, grpo_cfg()).values) REQUIRE(v == 0.0);
  }
  REQUIRE_THROWS_AS(group_advantages({}, grpo_cfg()), InputError);
}

TEST_CASE("group advantages: centering, scaling, invariances") {
  Rng r = derive_rng({21});
  for (int trial = 0; trial < 500; ++trial) {
    const size_t g = 2 + uniform_int(r, 7);
    std::vector<double> rw(g);
    for (auto& x : rw) x = uniform(r, -3, 3);
    const auto a = group_advantages(rw, grpo_cfg());
    const auto d = group_advantages(rw, grpo_cfg(GrpoVariant::dr_grpo));
    const GroupStats s = group_stats(rw);
    double mean = 0, var = 0;
    for (double v : a.values) mean += v;
    mean /= static_cast<double>(g);
    for (double v : a.values) var += (v - mean) * (v - mean);
    REQUIRE(std::abs(mean) < 1e-9);
    REQUIRE_THAT(std::sqrt(var / static_cast<double>(g)), WithinAbs(1.0, 1e-6));
    double dmean = 0;
    for (double v : d.values) dmean += v;
    REQUIRE(std::abs(dmean / static_cast<double>(g)) < 1e-9);
    for (size_t i = 0; i < g; ++i) REQUIRE_THAT(d.values[i], WithinAbs(a.values[i] * s.std, 1e-9));

    const double c = uniform(r, 0.1, 10), shift = uniform(r, -5, 5);
    std::vector<double> scaled(g), shifted(g);
    for (size_t i = 0; i < g; ++i) {
      scaled[i] = c * rw[i] + shift;
      shifted[i] = rw[i] + shift;
    }
    const auto as = group_advantages(scaled, grpo_cfg());
    const auto ds = group_advantages(shifted, grpo_cfg(GrpoVariant::dr_grpo));
    for (size_t i = 0; i < g; ++i) {
      REQUIRE_THAT(as.values[i], WithinAbs(a.values[i], 1e-9));
      REQUIRE_THAT(ds.values[i], WithinAbs(d.values[i], 1e-9));
    }
  }
}

TEST_CASE("kl estimator values") {
  REQUIRE(kl_estimate(-1.3, -1.3) == 0.0);
  REQUIRE_THAT(kl_estimate(0.0, std::log(2.0)), WithinAbs(2.0 - std::log(2.0) - 1.0, 1e-15));
  REQUIRE_THAT(kl_estimate(0.0, std::log(0.5)), WithinAbs(0.5 - std::log(0.5) - 1.0, 1e-15));
  REQUIRE_THAT(kl_estimate(0.0, std::log(2.0)), WithinAbs(0.30685, 1e-5));
  REQUIRE_THAT(kl_estimate(0.0, std::log(0.5)), WithinAbs(0.19315, 1e-5));
  REQUIRE_THROWS_AS(kl_estimate(std::nan(""), 0.0), NumericError);
  REQUIRE_THROWS_AS(kl_estimate(0.0, -INFINITY), NumericError);
}

TEST_CASE("kl estimator gradient matches finite differences") {
  Rng r = derive_rng({5});
  for (int i = 0; i < 200; ++i) {
    const double n = uniform(r, -4, 0), ref = uniform(r, -4, 0);
    const double h = 1e-6;
    const double fd = (kl_estimate(n + h, ref) - kl_estimate(n - h, ref)) / (2 * h);
    REQUIRE_THAT(kl_estimate_grad(n, ref), WithinAbs(fd, 1e-5));
  }
}

TEST_CASE("clipped surrogate values") {
  for (double a : {-2.0, 0.0, 0.7}) REQUIRE(clipped_surrogate(-0.4, -0.4, a, 0.2) == a);
  REQUIRE_THAT(clipped_surrogate(std::log(1.5), 0.0, 1.0, 0.2), WithinAbs(1.2, 1e-12));
  REQUIRE_THAT(clipped_surrogate(std::log(0.5), 0.0, -1.0, 0.2), WithinAbs(-0.8, 1e-12));
  REQUIRE_THROWS_AS(clipped_surrogate(0, 0, 1, 1.5), InputError);
}

TEST_CASE("clipped surrogate: bound and zero gradient past the clip") {
  Rng r = derive_rng({6});
  for (int i = 0; i < 10000; ++i) {
    const double ln = uniform(r, -3, 0), lo = uniform(r, -3, 0), a = uniform(r, -2, 2);
    const double rho = std::exp(ln - lo);
    const SurrogateTerm t = clipped_surrogate_term(ln, lo, a, 0.2);
    REQUIRE(t.value <= rho * a + 1e-12);
    if ((a > 0 && rho > 1.2) || (a < 0 && rho < 0.8)) REQUIRE(t.grad == 0.0);
  }
}

TEST_CASE("grpo_loss: identical policies and zero advantages give zero loss") {
  const PolicyParams p = small_policy(1);
  Fixture f = make_fixture(p, {1, 1, 1, 1}, 10);
  f.group.logp_ref = f.group.logp_old;
  const auto adv = group_advantages(f.group.rewards, grpo_cfg());
  REQUIRE(eval_loss(p, f, adv, grpo_cfg()).loss == 0.0);
}

TEST_CASE("grpo_loss: at rho = 1 with beta = 0 the gradient is REINFORCE with baseline") {
  const PolicyParams p = small_policy(2);
  Fixture f = make_fixture(p, {1, 0, 0, 1}, 20);
  GrpoConfig cfg = grpo_cfg();
  cfg.kl_beta = 0.0;
  const auto adv = group_advantages(f.group.rewards, cfg);
  REQUIRE_THAT(eval_loss(p, f, adv, cfg).loss, WithinAbs(0.0, 1e-12));

  const PolicyGrads g = loss_grads(p, f, adv, cfg);
  PolicyGrads ref = PolicyGrads::zeros(p, false);
  const double gsize = static_cast<double>(f.completions.size());
  for (size_t i = 0; i < f.completions.size(); ++i) {
    const auto fr = forward(p, f.prompt, f.completions[i]);
    const double w = -adv.values[i] / (gsize * static_cast<double>(fr.logp.size()));
    backward(p, fr.tape, std::vector<double>(fr.logp.size(), w), ref);
  }
  auto a = named_tensors(const_cast<AdapterSet&>(g.adapters));
  auto b = named_tensors(ref.adapters);
  for (size_t i = 0; i < a.size(); ++i) REQUIRE((*a[i].second - *b[i].second).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("grpo_loss gradient matches finite differences") {
  PolicyParams p = small_policy(3);
  Fixture f = make_fixture(p, {0.3, 1.0, -0.5, 2.0}, 30);
  // Move the current policy away from old and reference so ratios and KL are
  // not trivial.
  p.adapters.for_each([](const std::string&, MatrixXd& m) { m *= 1.3; });
  for (auto variant : {GrpoVariant::grpo, GrpoVariant::dr_grpo}) {
    for (auto level : {ClipLevel::token, ClipLevel::sequence}) {
      GrpoConfig cfg = grpo_cfg(variant);
      cfg.clip_level = level;
      cfg.max_completion_len = 16;
      cfg.clip_epsilon = 0.9;  // keep the fixture away from clip kinks
      const auto adv = group_advantages(f.group.rewards, cfg);
      const PolicyGrads g = loss_grads(p, f, adv, cfg);
      auto pt = named_tensors(p.adapters);
      auto gt = named_tensors(const_cast<AdapterSet&>(g.adapters));
      double worst = 0;
      for (size_t i = 0; i < pt.size(); ++i) {
        for (Eigen::Index k = 0; k < pt[i].second->size(); k += 3) {
          double& x = pt[i].second->data()[k];
          const double x0 = x;
          x = x0 + 1e-4;
          const double fp = eval_loss(p, f, adv, cfg).loss;
          x = x0 - 1e-4;
          const double fm = eval_loss(p, f, adv, cfg).loss;
          x = x0;
          const double fd = (fp - fm) / 2e-4, an = gt[i].second->data()[k];
          worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
        }
      }
      REQUIRE(worst < 1e-3);
    }
  }
}

TEST_CASE("grpo and dr_grpo agree up to the length factor on unit-std equal-length groups") {
  Rng r = derive_rng({8});
  for (int trial = 0; trial < 50; ++trial) {
    const size_t g = 4, len = 1 + uniform_int(r, 12);
    RolloutGroup grp;
    grp.rewards = {1, 0, 0, 1};  // population std exactly 0.5 -> rescale to 1
    for (auto& x : grp.rewards) x *= 2.0;
    for (size_t i = 0; i < g; ++i) {
      std::vector<double> n(len), o(len), rf(len);
      for (size_t t = 0; t < len; ++t) {
        n[t] = uniform(r, -3, -0.1);
        o[t] = n[t] + uniform(r, -0.3, 0.3);
        rf[t] = n[t] + uniform(r, -0.3, 0.3);
      }
      grp.logp_new.push_back(n);
      grp.logp_old.push_back(o);
      grp.logp_ref.push_back(rf);
      grp.completions.push_back(std::vector<int>(len, 3));
    }
    GrpoConfig a = grpo_cfg(), b = grpo_cfg(GrpoVariant::dr_grpo);
    a.max_completion_len = b.max_completion_len = 16;
    REQUIRE_THAT(group_stats(grp.rewards).std, WithinAbs(1.0, 1e-15));
    const double la = grpo_loss(grp, group_advantages(grp.rewards, a), a).loss;
    const double lb = grpo_loss(grp, group_advantages(grp.rewards, b), b).loss;
    REQUIRE_THAT(lb, WithinAbs(la * static_cast<double>(len) / 16.0, 1e-9));
  }
}

TEST_CASE("grpo_loss validates its inputs") {
  RolloutGroup grp;
  grp.rewards = {1, 0};
  grp.logp_new = {{-1.0}, {-1.0}};
  grp.logp_old = {{-1.0}, {-1.0}};
  grp.logp_ref = {{-1.0}};
  const auto adv = group_advantages(grp.rewards, grpo_cfg());
  REQUIRE_THROWS_AS(grpo_loss(grp, adv, grpo_cfg()), InputError);
  grp.logp_ref = {{-1.0}, {-1.0, -2.0}};
  REQUIRE_THROWS_AS(grpo_loss(grp, adv, grpo_cfg()), InputError);
  grp.logp_ref = {{-1.0}, {-1.0}};
  REQUIRE_THROWS_AS(grpo_loss(grp, group_advantages(grp.rewards, grpo_cfg(GrpoVariant::dr_grpo)), grpo_cfg()),
                    InputError);
  REQUIRE_NOTHROW(grpo_loss(grp, adv, grpo_cfg()));
}

TEST_CASE("one small gradient step does not decrease the surrogate") {
  PolicyParams p = small_policy(4);
  Fixture f = make_fixture(p, {1, 0, 0.5, 0}, 40);
  GrpoConfig cfg = grpo_cfg();
  cfg.kl_beta = 0.0;
  const auto adv = group_advantages(f.group.rewards, cfg);
  const double before = eval_loss(p, f, adv, cfg).loss;
  const PolicyGrads g = loss_grads(p, f, adv, cfg);
  auto pt = named_tensors(p.adapters);
  auto gt = named_tensors(const_cast<AdapterSet&>(g.adapters));
  for (size_t i = 0; i < pt.size(); ++i) *pt[i].second -= 1e-4 * *gt[i].second;
  const double after = eval_loss(p, f, adv, cfg).loss;
  REQUIRE(-after >= -before);
}

TEST_CASE("grpo config validation") {
  GrpoConfig c;
  c.group_size = 1;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c.variant = GrpoVariant::dr_grpo;
  REQUIRE_NOTHROW(c.validate());
  c.clip_epsilon = 1.0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  REQUIRE(grpo_variant_from_string("DrGRPO") == GrpoVariant::dr_grpo);
  REQUIRE_THROWS_AS(grpo_variant_from_string("ppo"), ConfigError);
}

#include <catch_amalgamated.hpp>

#include <cmath>

#include "lorarl/optim.hpp"
#include "lorarl/random.hpp"

using namespace lorarl;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("schedule endpoints") {
  ScheduleConfig s;
  s.total_steps = 100;
  REQUIRE(s.warmup_steps() == 10);
  REQUIRE(lr_at(0, s) == 0.0);
  REQUIRE_THAT(lr_at(10, s), WithinRel(1e-6, 1e-12));
  REQUIRE_THAT(lr_at(100, s), WithinRel(0.1 * 1e-6, 1e-12));
  REQUIRE_THAT(lr_at(5, s), WithinRel(0.5e-6, 1e-12));
  REQUIRE_THROWS_AS(lr_at(-1, s), InputError);
  REQUIRE_THROWS_AS(lr_at(101, s), InputError);
}

TEST_CASE("schedule is nonincreasing after warmup and continuous at the knee") {
  ScheduleConfig s{3e-4, 0.1, 0.1, 875};
  double prev = lr_at(s.warmup_steps(), s);
  for (int t = s.warmup_steps() + 1; t <= s.total_steps; ++t) {
    const double v = lr_at(t, s);
    REQUIRE(v <= prev);
    prev = v;
  }
  REQUIRE_THAT(lr_at(s.warmup_steps() - 1, s), WithinAbs(lr_at(s.warmup_steps(), s), s.peak_lr / s.warmup_steps() + 1e-15));
}

TEST_CASE("schedule validation") {
  ScheduleConfig s{1e-6, 0.1, 0.1, 0};
  REQUIRE_THROWS_AS(s.validate(), ConfigError);
  s.total_steps = 1;
  REQUIRE_NOTHROW(s.validate());
  s.min_lr_fraction = 1.0;
  REQUIRE_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("adamw: zero gradient leaves parameters unchanged") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(2, 3, 0.7), g = Eigen::MatrixXd::Zero(2, 3);
  const Eigen::MatrixXd before = p;
  AdamWState st;
  adamw_step({{"w", &p}}, {{"w", &g}}, st, 0.1);
  REQUIRE(p == before);
  REQUIRE(st.step == 1);
}

TEST_CASE("adamw: first step of a scalar moves by lr") {
  Eigen::MatrixXd p(1, 1), g(1, 1);
  p << 0.0;
  g << 1.0;
  AdamWState st;
  adamw_step({{"w", &p}}, {{"w", &g}}, st, 0.1);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  REQUIRE_THAT(p(0, 0), WithinAbs(-0.1 / (1.0 + 1e-8), 1e-15));
}

TEST_CASE("adamw matches a scalar reference recurrence") {
  Rng r = derive_rng({4});
  Eigen::MatrixXd p(1, 1), g(1, 1);
  p << 0.5;
  double x = 0.5, m = 0, v = 0;
  AdamWState st;
  const AdamWConfig cfg{0.9, 0.999, 1e-8, 0.01};
  for (int t = 1; t <= 50; ++t) {
    g(0, 0) = uniform(r, -1, 1);
    adamw_step({{"w", &p}}, {{"w", &g}}, st, 0.01, cfg);
    m = 0.9 * m + 0.1 * g(0, 0);
    v = 0.999 * v + 0.001 * g(0, 0) * g(0, 0);
    x *= 1.0 - 0.01 * 0.01;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    REQUIRE_THAT(p(0, 0), WithinAbs(x, 1e-14));
  }
}

TEST_CASE("adamw: non-finite gradient aborts and names the parameter") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(1, 2), b = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd ga = Eigen::MatrixXd::Ones(1, 2), gb = Eigen::MatrixXd::Zero(2, 2);
  gb(1, 0) = std::nan("");
  AdamWState st;
  REQUIRE_THROWS_WITH(adamw_step({{"alpha", &a}, {"beta", &b}}, {{"alpha", &ga}, {"beta", &gb}}, st, 0.1),
                      Catch::Matchers::ContainsSubstring("beta"));
  REQUIRE(st.step == 0);
  REQUIRE(a.isZero());
}

TEST_CASE("adamw: identical runs give identical trajectories") {
  auto run = [] {
    Rng r = derive_rng({9});
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 3), g(3, 3);
    AdamWState st;
    std::vector<Eigen::MatrixXd> traj;
    for (int t = 0; t < 50; ++t) {
      for (auto& x : g.reshaped()) x = uniform(r, -1, 1);
      adamw_step({{"w", &p}}, {{"w", &g}}, st, 1e-3);
      traj.push_back(p);
    }
    return traj;
  };
  REQUIRE(run() == run());
}

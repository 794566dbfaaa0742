// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fllp/bench1d.hpp"

#include <array>
#include <cmath>
#include <numeric>

using namespace fllp;

namespace {

BenchConfig tiny() {
  BenchConfig cfg;
  cfg.task_means = {3, 6, 9};
  cfg.samples = 40;
  cfg.timesteps = 21;
  cfg.steps = 15;
  cfg.batch = 8;
  cfg.pretrain_steps = 30;
  cfg.eval_samples = 50;
  cfg.consolidation_steps = 3;
  cfg.net = NetConfig{8, 2, 4, 4};
  return cfg;
}

std::vector<TaskSpec> tasks_of(const BenchConfig& cfg) {
  std::vector<TaskSpec> t;
  for (double m : cfg.task_means) t.push_back({m, 1.0, cfg.samples});
  return t;
}

const std::array<double, 5> kTrue{3, 6, 9, 12, 15};

}  // namespace

TEST_CASE("forgetting_rate on the reported generated means") {
  const std::array<double, 5> collapsed{9.6, 9.6, 9.6, 9.6, 9.6};
  const std::array<double, 5> subspace_row{7.2, 9.2, 10.3, 10.1, 12.4};
  const std::array<double, 5> fllp_row{6.6, 8.8, 8.0, 13.7, 12.7};
  CHECK(std::abs(forgetting_rate(kTrue, collapsed) - 18.6) <= 1e-9);
  CHECK(std::abs(forgetting_rate(kTrue, subspace_row) - 13.2) <= 1e-9);
  CHECK(std::abs(forgetting_rate(kTrue, fllp_row) - 11.4) <= 1e-9);
}

TEST_CASE("forgetting_rate examples and errors") {
  CHECK(forgetting_rate(kTrue, kTrue) == 0.0);
  const std::array<double, 1> a{3}, b{5};
  CHECK(forgetting_rate(a, b) == 2.0);
  CHECK(forgetting_rate(b, a) == 2.0);
  CHECK_THROWS_AS(forgetting_rate(kTrue, a), std::invalid_argument);
}

TEST_CASE("drift_series") {
  const VectorXd s = VectorXd::Constant(3, 0.4);
  const std::vector<VectorXd> same{s, s, s};
  CHECK(drift_series(same, 1.0) == std::vector<double>{0.0, 0.0});
  const std::vector<VectorXd> grow{VectorXd::Constant(1, 0.5), VectorXd::Constant(1, 0.7)};
  const auto d = drift_series(grow, 1.0);
  REQUIRE(d.size() == 1);
  CHECK(d[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(drift_series(grow, 2.0)[0] == doctest::Approx(0.1));
  const std::vector<VectorXd> monotone{VectorXd::Constant(2, 1.0), VectorXd::Constant(2, 2.0),
                                       VectorXd::Constant(2, 2.5)};
  for (double v : drift_series(monotone, 1.0)) CHECK(v >= 0.0);
  CHECK_THROWS_AS(drift_series(std::vector<VectorXd>{s}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(drift_series(same, 0.0), std::invalid_argument);
}

TEST_CASE("modes and tasks") {
  CHECK(parse_mode("baseline") == Mode::kBaseline);
  CHECK(parse_mode("subspace") == Mode::kSubspace);
  CHECK(parse_mode("fllp") == Mode::kFllp);
  CHECK(to_string(Mode::kFllp) == "fllp");
  CHECK_THROWS_AS(parse_mode("replay"), std::invalid_argument);
  const auto t = default_tasks();
  REQUIRE(t.size() == 5);
  CHECK(t[0].mean == 3.0);
  CHECK(t[4].mean == 15.0);
  CHECK(t[2].sample_count == 1000);
  CHECK_THROWS_AS((TaskSpec{1.0, 0.0, 10}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((TaskSpec{1.0, 1.0, 0}).validate(), std::invalid_argument);
}

TEST_CASE("config validation") {
  BenchConfig().validate();
  auto bad = [](auto mutate) {
    BenchConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  bad([](BenchConfig& c) { c.task_means.clear(); });
  bad([](BenchConfig& c) { c.samples = 0; });
  bad([](BenchConfig& c) { c.timesteps = 5; });
  bad([](BenchConfig& c) { c.beta = 0.0; });
  bad([](BenchConfig& c) { c.beta = 1.5; });
  bad([](BenchConfig& c) { c.gamma1 = -1; });
  bad([](BenchConfig& c) { c.gamma2 = std::nan(""); });
  bad([](BenchConfig& c) { c.curvature = 0; });
  bad([](BenchConfig& c) { c.steps = 0; });
  bad([](BenchConfig& c) { c.net.time_dim = 3; });
}

TEST_CASE("the data source never serves earlier tasks during training") {
  const BenchConfig cfg = tiny();
  const auto tasks = tasks_of(cfg);
  const auto pre = pretrain(cfg, 1);
  for (Mode m : {Mode::kBaseline, Mode::kSubspace, Mode::kFllp}) {
    TaskDataSource data(tasks, 1);
    run_sequence(pre, data, tasks, m, cfg, 1);
    const auto& reads = data.reads();
    for (std::size_t c = 0; c < reads.size(); ++c) {
      for (std::size_t j = 0; j < reads.size(); ++j) {
        if (j == c) CHECK(reads[c][j] > 0);
        else CHECK(reads[c][j] == 0);
      }
    }
  }
}

TEST_CASE("reports are consistent and deterministic") {
  const BenchConfig cfg = tiny();
  const auto a = run_experiment(cfg, 3, {Mode::kBaseline, Mode::kSubspace, Mode::kFllp});
  const auto b = run_experiment(cfg, 3, {Mode::kBaseline, Mode::kSubspace, Mode::kFllp});
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& r = a[i];
    REQUIRE(r.tasks.size() == 3);
    double sum = 0;
    for (std::size_t t = 0; t < r.tasks.size(); ++t) {
      CHECK(r.tasks[t].true_mean == cfg.task_means[t]);
      CHECK(r.tasks[t].abs_error == std::abs(r.tasks[t].generated_mean - r.tasks[t].true_mean));
      sum += r.tasks[t].abs_error;
    }
    CHECK(r.forgetting_rate == sum);
    CHECK(r.drift.size() == 3);  // pretrain snapshot plus one per task
    CHECK(r.drift_mean == doctest::Approx(std::accumulate(r.drift.begin(), r.drift.end(), 0.0) / 3.0));
    CHECK(r.forgetting_rate == b[i].forgetting_rate);
    CHECK(r.drift == b[i].drift);
    CHECK(r.seed == 3);
  }
  CHECK(a[0].mode == Mode::kBaseline);
  CHECK(a[0].chains.empty());
  REQUIRE(a[2].chains.size() == 3);
  CHECK(a[2].chains[0].parents.empty());  // first concept has no parents
  for (std::size_t t = 1; t < 3; ++t) CHECK(a[2].chains[t].parents.size() <= t);
}

TEST_CASE("different seeds give different reports") {
  const BenchConfig cfg = tiny();
  const auto a = run_experiment(cfg, 1, {Mode::kBaseline});
  const auto b = run_experiment(cfg, 2, {Mode::kBaseline});
  CHECK(a[0].forgetting_rate != b[0].forgetting_rate);
}

TEST_CASE("pretraining fits N(1, 1) and freezes the net") {
  BenchConfig cfg;  // default budget
  const auto a = pretrain(cfg, 0);
  CHECK(a.net.frozen());
  CHECK(a.generated_mean >= 0.7);
  CHECK(a.generated_mean <= 1.3);
  const auto b = pretrain(cfg, 0);
  CHECK(a.net.weights_hash() == b.net.weights_hash());
  CHECK(a.token == b.token);
}

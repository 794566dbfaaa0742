// SPDX-License-Identifier: Apache-2.0

#include "fllp/bench1d.hpp"

#include "fllp/entailment.hpp"
#include "fllp/weight_space.hpp"

#include <Eigen/QR>

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fllp {

namespace {

enum Stream : std::uint64_t {
  kPretrain = 1,
  kPretrainEval = 2,
  kTaskData = 3,
  kTraining = 4,
  kEvaluation = 5,
  kSubspaceInit = 6,
};

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// One noise-prediction minibatch.
struct Minibatch {
  VectorXd x_t;
  VectorXd eps;
  std::vector<int> t;
};

Minibatch make_minibatch(const VectorXd& x0, const NoiseSchedule& schedule, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick_t(1, schedule.timesteps);
  std::normal_distribution<double> normal(0.0, 1.0);
  Minibatch mb;
  const Eigen::Index n = x0.size();
  mb.x_t.resize(n);
  mb.eps.resize(n);
  mb.t.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const int t = pick_t(rng);
    const double e = normal(rng);
    mb.t[static_cast<std::size_t>(j)] = t;
    mb.eps(j) = e;
    mb.x_t(j) = q_sample(x0(j), schedule.alpha_bar(t), e);
  }
  return mb;
}

VectorXd flatten(const MatrixXd& adapter, const VectorXd& token) {
  VectorXd theta(adapter.size() + token.size());
  theta.head(adapter.size()) = Eigen::Map<const VectorXd>(adapter.data(), adapter.size());
  theta.tail(token.size()) = token;
  return theta;
}

double entail_value(const VectorXd& child_summary, const std::vector<VectorXd>& parent_summaries,
                    const ConeParams<double>& cone, const Curvature<double>& k) {
  std::vector<HyperbolicPoint<double>> parents;
  parents.reserve(parent_summaries.size());
  for (const auto& s : parent_summaries) parents.push_back(exp_map_origin(s, k));
  return entail_loss_chain<double>(exp_map_origin(child_summary, k), parents, cone, k);
}

void require_finite(double v, Mode mode, std::size_t task, int step, const char* what) {
  if (!std::isfinite(v)) {
    throw DivergenceError("divergence: mode=" + to_string(mode) + " task=" + std::to_string(task) +
                          " step=" + std::to_string(step) + " " + what + " is not finite");
  }
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kBaseline:
      return "baseline";
    case Mode::kSubspace:
      return "subspace";
    case Mode::kFllp:
      return "fllp";
  }
  return "unknown";
}

Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::kBaseline;
  if (s == "subspace") return Mode::kSubspace;
  if (s == "fllp") return Mode::kFllp;
  throw std::invalid_argument("unknown mode '" + s + "' (expected baseline, subspace or fllp)");
}

void TaskSpec::validate() const {
  if (!std::isfinite(mean)) throw std::invalid_argument("task mean must be finite");
  if (!(stddev > 0.0)) throw std::invalid_argument("task stddev must be positive");
  if (sample_count < 1) throw std::invalid_argument("task sample count must be >= 1");
}

std::vector<TaskSpec> default_tasks(int count, int samples) {
  std::vector<TaskSpec> tasks;
  for (int i = 1; i <= count; ++i) tasks.push_back({3.0 * i, 1.0, samples});
  return tasks;
}

void BenchConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (task_means.empty()) fail("task-means must not be empty");
  for (double m : task_means)
    if (!std::isfinite(m)) fail("task-means must be finite");
  if (samples < 1) fail("samples must be >= 1");
  if (timesteps < 21) fail("timesteps must be >= 21");
  if (!(beta > 0.0 && beta <= 1.0)) fail("beta must lie in (0, 1]");
  if (!(gamma1 >= 0.0) || !std::isfinite(gamma1)) fail("gamma1 must be finite and >= 0");
  if (!(gamma2 >= 0.0) || !std::isfinite(gamma2)) fail("gamma2 must be finite and >= 0");
  if (!(curvature > 0.0) || !std::isfinite(curvature)) fail("curvature must be finite and > 0");
  if (!(curvature_lr > 0.0)) fail("curvature-lr must be > 0");
  if (!(aperture_constant > 0.0)) fail("aperture constant must be > 0");
  if (steps < 1) fail("steps must be >= 1");
  if (batch < 1) fail("batch must be >= 1");
  if (!(token_lr > 0.0) || !(adapter_lr > 0.0) || !(pretrain_lr > 0.0)) fail("learning rates must be > 0");
  if (!(token_init_noise >= 0.0)) fail("token init noise must be >= 0");
  if (consolidation_steps < 0) fail("consolidation steps must be >= 0");
  if (pretrain_steps < 1) fail("pretrain steps must be >= 1");
  if (eval_samples < 1) fail("eval samples must be >= 1");
  if (net.hidden_layers < 1 || net.hidden_width < 1 || net.token_dim < 1 || net.time_dim < 2 ||
      net.time_dim % 2 != 0) {
    fail("invalid network shape");
  }
}

double forgetting_rate(std::span<const double> true_means, std::span<const double> generated_means) {
  if (true_means.size() != generated_means.size()) {
    throw std::invalid_argument("forgetting_rate: " + std::to_string(true_means.size()) + " true means vs " +
                                std::to_string(generated_means.size()) + " generated means");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < true_means.size(); ++i) total += std::abs(generated_means[i] - true_means[i]);
  return total;
}

std::vector<double> drift_series(std::span<const VectorXd> snapshots, double base_norm) {
  if (snapshots.size() < 2) throw std::invalid_argument("drift_series: need at least 2 snapshots");
  if (!(base_norm > 0.0)) throw std::invalid_argument("drift_series: base norm must be positive");
  std::vector<double> out;
  out.reserve(snapshots.size() - 1);
  for (std::size_t c = 1; c < snapshots.size(); ++c) {
    out.push_back(std::abs(snapshots[c].norm() - snapshots[c - 1].norm()) / base_norm);
  }
  return out;
}

TaskDataSource::TaskDataSource(const std::vector<TaskSpec>& tasks, std::uint64_t seed) {
  auto rng = make_rng(seed, kTaskData);
  for (const auto& t : tasks) {
    t.validate();
    std::normal_distribution<double> dist(t.mean, t.stddev);
    data_.push_back(VectorXd::NullaryExpr(t.sample_count, [&] { return dist(rng); }));
  }
  reads_.assign(tasks.size(), std::vector<long>(tasks.size(), 0));
}

void TaskDataSource::begin_task(std::size_t task) {
  if (task >= data_.size()) throw std::out_of_range("TaskDataSource: unknown task");
  current_ = task;
}

VectorXd TaskDataSource::draw(std::size_t task, int batch, std::mt19937_64& rng) {
  if (task >= data_.size()) throw std::out_of_range("TaskDataSource: unknown task");
  if (current_) reads_[*current_][task] += batch;
  const auto& d = data_[task];
  std::uniform_int_distribution<Eigen::Index> pick(0, d.size() - 1);
  return VectorXd::NullaryExpr(batch, [&] { return d(pick(rng)); });
}

PretrainResult pretrain(const BenchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(seed, kPretrain);
  const auto schedule = NoiseSchedule::linear_default(cfg.timesteps);
  DenoiserNet net(cfg.net, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd token = VectorXd::NullaryExpr(cfg.net.token_dim, [&] { return 0.5 * normal(rng); });
  TaskDataSource data({TaskSpec{cfg.pretrain_mean, 1.0, cfg.samples}}, seed ^ 0x9e3779b97f4a7c15ull);

  std::vector<AdamSlot> wslots(net.layers().size()), bslots(net.layers().size());
  AdamSlot tslot;
  for (int step = 0; step < cfg.pretrain_steps; ++step) {
    const auto mb = make_minibatch(data.draw(0, cfg.batch, rng), schedule, rng);
    const VectorXd out = net.forward(mb.x_t, mb.t, token, schedule.timesteps);
    const VectorXd resid = out - mb.eps;
    const double mse = resid.squaredNorm() / static_cast<double>(cfg.batch);
    if (!std::isfinite(mse)) {
      throw DivergenceError("divergence: pretraining step " + std::to_string(step) + " loss is not finite");
    }
    const auto g = net.backward((2.0 / cfg.batch) * resid);
    auto& layers = net.mutable_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      wslots[l].step(layers[l].weight, g.weights[l], cfg.pretrain_lr);
      bslots[l].step(layers[l].bias, g.biases[l], cfg.pretrain_lr);
    }
    tslot.step(token, g.token, cfg.token_lr);
  }
  net.set_frozen(true);

  auto eval_rng = make_rng(seed, kPretrainEval);
  const double gm = p_sample_loop(net, token, schedule, eval_rng, cfg.eval_samples).mean();
  if (!std::isfinite(gm)) throw DivergenceError("divergence: pretrained net generates non-finite samples");
  return {std::move(net), std::move(token), gm};
}

ForgettingReport run_sequence(const PretrainResult& pre, TaskDataSource& data, const std::vector<TaskSpec>& tasks,
                              Mode mode, const BenchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!pre.net.frozen()) throw std::invalid_argument("run_sequence: the pretrained net must be frozen");
  if (data.task_count() != tasks.size()) throw std::invalid_argument("run_sequence: data/task count mismatch");

  DenoiserNet net = pre.net;
  const auto schedule = NoiseSchedule::linear_default(cfg.timesteps);
  auto rng = make_rng(seed, kTraining);
  std::normal_distribution<double> normal(0.0, 1.0);

  const bool use_subspace = mode != Mode::kBaseline;
  const bool use_entail = mode == Mode::kFllp;
  const double gamma1 = use_entail ? cfg.gamma1 : 0.0;
  const double gamma2 = use_subspace ? cfg.gamma2 : 0.0;

  ConeParams<double> cone{cfg.aperture_constant, cfg.beta};
  cone.validate();
  Curvature<double> curvature(cfg.curvature, cfg.learn_curvature, cfg.curvature_lr);

  const Eigen::Index rows = net.adapter().rows(), cols = net.adapter().cols();
  const Eigen::Index rank = default_subspace_rank(rows, cols);
  TaskWeights<double> deltas;  // adapter after each task
  SharedSubspace<double> subspace;
  {
    auto init_rng = make_rng(seed, kSubspaceInit);
    const MatrixXd gauss = MatrixXd::NullaryExpr(cols, rank, [&] { return normal(init_rng); });
    const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(gauss).householderQ() * MatrixXd::Identity(cols, rank);
    subspace.basis.push_back(q.transpose());
  }

  ConceptRegistry<double> registry(net.token_dim(), net.adapter().rows());
  TokenTable tokens;
  std::vector<VectorXd> snapshots{flatten(net.adapter(), pre.token)};
  ForgettingReport report;
  report.mode = mode;
  report.seed = seed;

  AdamSlot adapter_slot;
  VectorXd prev_token = pre.token;

  for (std::size_t c = 0; c < tasks.size(); ++c) {
    data.begin_task(c);
    VectorXd token = prev_token;
    for (Eigen::Index i = 0; i < token.size(); ++i) token(i) += cfg.token_init_noise * normal(rng);
    const VectorXd feature = token;

    ParentChain chain;
    std::vector<VectorXd> parent_summaries;
    if (use_entail) {
      chain = parent_search(feature, registry, curvature);
      for (int id : chain.parents) parent_summaries.push_back(registry.at(id).attention_summary);
    }

    // Orthogonal projector onto the consolidated row space of W*.
    const bool subspace_active = use_subspace && !deltas.empty();
    MatrixXd projector;
    if (subspace_active) {
      const MatrixXd& basis = subspace.basis.front();
      projector = basis.completeOrthogonalDecomposition().pseudoInverse() * basis;
    }

    AdamSlot token_slot;
    VectorXd summary_sum = VectorXd::Zero(net.adapter().rows());

    for (int step = 0; step < cfg.steps; ++step) {
      const auto mb = make_minibatch(data.draw(c, cfg.batch, rng), schedule, rng);
      const VectorXd out = net.forward(mb.x_t, mb.t, token, schedule.timesteps);
      const VectorXd resid = out - mb.eps;
      const double mse = resid.squaredNorm() / static_cast<double>(cfg.batch);
      require_finite(mse, mode, c, step, "mse");

      const VectorXd mid_mean = net.mid_activation().rowwise().mean();
      summary_sum += mid_mean;

      MatrixXd d_mid;
      double dk = 0.0;
      if (use_entail && !chain.empty()) {
        std::vector<HyperbolicPoint<double>> parents;
        for (const auto& s : parent_summaries) parents.push_back(exp_map_origin(s, curvature));
        const auto child = exp_map_origin(mid_mean, curvature);
        const VectorXd g_space = entail_loss_chain_grad<double>(child, parents, cone, curvature);
        const VectorXd g_tangent = exp_map_origin_jacobian(mid_mean, curvature).transpose() * g_space;
        require_finite(g_tangent.sum(), mode, c, step, "entailment gradient");
        d_mid = (gamma1 / cfg.batch) * g_tangent.replicate(1, cfg.batch);
        if (curvature.learnable()) {
          const double k = curvature.value();
          const double h = 1e-6 * k;
          const double up = entail_value(mid_mean, parent_summaries, cone, Curvature<double>(k + h));
          const double down = entail_value(mid_mean, parent_summaries, cone, Curvature<double>(k - h));
          dk = gamma1 * (up - down) / (2.0 * h);
        }
      }

      auto g = net.backward((2.0 / cfg.batch) * resid, d_mid.size() ? &d_mid : nullptr);
      if (subspace_active) {
        const MatrixXd& delta = net.adapter();
        g.adapter += (2.0 * gamma2) * (delta - delta * projector);
      }
      require_finite(g.adapter.sum() + g.token.sum(), mode, c, step, "gradient");

      MatrixXd adapter = net.adapter();
      adapter_slot.step(adapter, g.adapter, cfg.adapter_lr);
      net.set_adapter(adapter);
      token_slot.step(token, g.token, cfg.token_lr);
      if (dk != 0.0 && std::isfinite(dk)) curvature.apply_gradient(dk);
    }

    const VectorXd summary = summary_sum / static_cast<double>(cfg.steps);
    registry.add(token, summary, feature);
    tokens.push_back(token);
    prev_token = token;
    report.chains.push_back(chain);
    snapshots.push_back(flatten(net.adapter(), token));

    deltas.push_back({net.adapter()});
    if (use_subspace) {
      subspace.projection.push_back({solve_projection(deltas.back().front(), subspace.basis.front())});
      for (int it = 0; it < cfg.consolidation_steps; ++it) alternating_step(deltas, subspace);
    }
  }

  auto eval_rng = make_rng(seed, kEvaluation);
  std::vector<double> true_means, gen_means;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double gm = p_sample_loop(net, tokens[i], schedule, eval_rng, cfg.eval_samples).mean();
    require_finite(gm, mode, i, -1, "generated mean");
    true_means.push_back(tasks[i].mean);
    gen_means.push_back(gm);
    report.tasks.push_back({tasks[i].mean, gm, std::abs(gm - tasks[i].mean)});
  }
  report.forgetting_rate = forgetting_rate(true_means, gen_means);
  report.drift = drift_series(snapshots, snapshots.front().norm());
  report.drift_mean = std::accumulate(report.drift.begin(), report.drift.end(), 0.0) /
                      static_cast<double>(report.drift.size());
  if (!use_entail) report.chains.clear();
  return report;
}

std::vector<ForgettingReport> run_experiment(const BenchConfig& cfg, std::uint64_t seed,
                                             const std::vector<Mode>& modes) {
  cfg.validate();
  std::vector<TaskSpec> tasks;
  for (double m : cfg.task_means) tasks.push_back({m, 1.0, cfg.samples});
  const auto pre = pretrain(cfg, seed);
  std::vector<ForgettingReport> out;
  for (Mode m : modes) {
    TaskDataSource data(tasks, seed);
    out.push_back(run_sequence(pre, data, tasks, m, cfg, seed));
  }
  return out;
}

}  // namespace fllp

// SPDX-License-Identifier: Apache-2.0
//
// Five-task 1D Gaussian continual-learning benchmark.
//
// A denoiser is pretrained on N(1, 1) and frozen. Each task then trains
// its own token embedding plus a shared first-layer adapter, in order and
// without access to earlier tasks' samples. After the last task every
// task is sampled with its own token and the final adapter; the
// forgetting rate is the summed absolute error of the generated means.

#pragma once

#include "fllp/net.hpp"
#include "fllp/parent_search.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fllp {

enum class Mode { kBaseline, kSubspace, kFllp };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct TaskSpec {
  double mean = 0.0;
  double stddev = 1.0;
  int sample_count = 1000;

  void validate() const;
};

/// mu_i = 3 i for i = 1..count.
std::vector<TaskSpec> default_tasks(int count = 5, int samples = 1000);

struct BenchConfig {
  std::vector<double> task_means{3, 6, 9, 12, 15};
  int samples = 1000;         // training samples per task
  int timesteps = 100;
  double beta = 0.5;          // aperture fraction in the entailment hinge
  double gamma1 = 0.1;        // entailment weight
  double gamma2 = 0.1;        // subspace weight
  double curvature = 1.0;
  bool learn_curvature = true;
  double curvature_lr = 1e-4;
  double aperture_constant = 0.1;
  int steps = 2000;           // gradient steps per task
  int batch = 64;
  double token_lr = 1e-3;
  double adapter_lr = 1e-3;
  double token_init_noise = 0.01;
  int consolidation_steps = 50;
  int pretrain_steps = 4000;
  double pretrain_lr = 1e-4;
  double pretrain_mean = 1.0;
  int eval_samples = 1000;
  NetConfig net;

  void validate() const;  // throws std::invalid_argument
};

struct TaskResult {
  double true_mean = 0.0;
  double generated_mean = 0.0;
  double abs_error = 0.0;
};

struct ForgettingReport {
  Mode mode = Mode::kBaseline;
  std::uint64_t seed = 0;
  std::vector<TaskResult> tasks;
  double forgetting_rate = 0.0;
  std::vector<double> drift;
  double drift_mean = 0.0;
  std::vector<ParentChain> chains;  // per task, fllp mode only
};

/// Sum of |generated - true|; lengths must match.
double forgetting_rate(std::span<const double> true_means, std::span<const double> generated_means);

/// Per consecutive pair |‖θ_c‖ - ‖θ_{c-1}‖| / base_norm.
std::vector<double> drift_series(std::span<const VectorXd> snapshots, double base_norm);

/// Per-task training samples, generated once per seed. Every batch draw is
/// logged against the task currently being trained so tests can audit that
/// no earlier task's data is read.
class TaskDataSource {
 public:
  TaskDataSource(const std::vector<TaskSpec>& tasks, std::uint64_t seed);

  std::size_t task_count() const { return data_.size(); }
  void begin_task(std::size_t task);
  VectorXd draw(std::size_t task, int batch, std::mt19937_64& rng);

  /// reads()[c][j]: samples of task j read while task c was being trained.
  const std::vector<std::vector<long>>& reads() const { return reads_; }

 private:
  std::vector<VectorXd> data_;
  std::vector<std::vector<long>> reads_;
  std::optional<std::size_t> current_;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainResult {
  DenoiserNet net;
  VectorXd token;
  double generated_mean = 0.0;
};

/// Trains a fresh net on N(pretrain_mean, 1) and freezes it.
PretrainResult pretrain(const BenchConfig& cfg, std::uint64_t seed);

/// Runs the task sequence for one mode on a copy of the pretrained net.
ForgettingReport run_sequence(const PretrainResult& pre, TaskDataSource& data, const std::vector<TaskSpec>& tasks,
                              Mode mode, const BenchConfig& cfg, std::uint64_t seed);

/// Convenience: pretrain once for the seed and run every requested mode.
std::vector<ForgettingReport> run_experiment(const BenchConfig& cfg, std::uint64_t seed,
                                             const std::vector<Mode>& modes);

}  // namespace fllp

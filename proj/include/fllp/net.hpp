// SPDX-License-Identifier: Apache-2.0
//
// Small dense noise-prediction network for scalar diffusion, with manual
// backpropagation, a linear-beta DDPM schedule and ancestral sampling.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fllp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation : std::uint8_t { kIdentity = 0, kSiLU = 1 };

struct Layer {
  MatrixXd weight;  // out x in
  VectorXd bias;    // out
  Activation activation = Activation::kIdentity;
};

struct NetConfig {
  int hidden_width = 64;
  int hidden_layers = 3;
  int time_dim = 16;
  int token_dim = 16;
};

/// Sinusoidal embedding [sin(t f_0..f_{h-1}), cos(t f_0..f_{h-1})] with
/// f_i = 10000^(-i/h), h = dim/2.
VectorXd timestep_embedding(int t, int dim);

/// Gradients produced by DenoiserNet::backward. `weights`/`biases` are
/// empty when the network is frozen.
struct NetGradients {
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  MatrixXd adapter;  // same shape as the first layer's weight
  VectorXd token;
};

/// Input per sample: [x_t, timestep embedding, token embedding]; output:
/// predicted noise. The first layer carries an additive adapter delta that
/// is kept apart from (and trains independently of) the base weights.
class DenoiserNet {
 public:
  DenoiserNet(const NetConfig& cfg, std::mt19937_64& rng);
  DenoiserNet(std::vector<Layer> layers, int time_dim, int token_dim);

  int input_dim() const { return 1 + time_dim_ + token_dim_; }
  int time_dim() const { return time_dim_; }
  int token_dim() const { return token_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  const MatrixXd& adapter() const { return adapter_; }
  void set_adapter(const MatrixXd& a);

  /// Index of the hidden layer whose output is exposed as the "middle"
  /// activation.
  int mid_layer() const { return static_cast<int>(layers_.size() - 1) / 2; }

  /// Batched forward. `t` holds one timestep per sample in [1, num_timesteps].
  VectorXd forward(const VectorXd& x_t, std::span<const int> t, const VectorXd& token, int num_timesteps);

  /// Post-activation output of mid_layer() from the last forward, hidden x batch.
  const MatrixXd& mid_activation() const;

  /// Backward pass for the last forward. `d_out` is dL/d(output) per sample;
  /// `d_mid`, if given, is an extra dL/d(mid activation) (hidden x batch).
  NetGradients backward(const VectorXd& d_out, const MatrixXd* d_mid = nullptr);

  /// FNV-1a over the bytes of all base weights and biases.
  std::uint64_t weights_hash() const;

 private:
  std::vector<Layer> layers_;
  MatrixXd adapter_;
  int time_dim_;
  int token_dim_;
  bool frozen_ = false;
  MatrixXd temb_table_;  // embedding of timestep t in column t-1

  struct Cache {
    bool valid = false;
    std::vector<MatrixXd> inputs;  // input to each layer
    std::vector<MatrixXd> pre;     // pre-activation of each layer
    MatrixXd mid;
  } cache_;
};

/// Adam update applied in place to one dense parameter.
class AdamSlot {
 public:
  AdamSlot() = default;
  template <class Derived>
  void step(Eigen::DenseBase<Derived>& param, const Eigen::Ref<const MatrixXd>& grad, double lr);

 private:
  MatrixXd m_, v_;
  long t_ = 0;
};

struct NoiseSchedule {
  int timesteps = 0;
  VectorXd betas;       // beta_1..beta_T at index t-1
  VectorXd alpha_bars;  // prod_{s<=t} (1 - beta_s)

  NoiseSchedule(int timesteps, double beta_start, double beta_end);
  /// Linear betas from 0.1/T to 20/T.
  static NoiseSchedule linear_default(int timesteps);

  double beta(int t) const { return betas(t - 1); }
  double alpha_bar(int t) const { return alpha_bars(t - 1); }
};

/// x_t = sqrt(alpha_bar) x_0 + sqrt(1 - alpha_bar) eps.
inline double q_sample(double x0, double alpha_bar, double eps) {
  return std::sqrt(alpha_bar) * x0 + std::sqrt(1.0 - alpha_bar) * eps;
}
double q_sample(double x0, int t, double eps, const NoiseSchedule& schedule);

/// Noise predictor evaluated on a whole batch at one timestep.
using NoisePredictor = std::function<VectorXd(const VectorXd& x, int t)>;

/// Ancestral DDPM sampling of n scalars, sigma_t^2 = beta_t.
VectorXd p_sample_loop(const NoisePredictor& predictor, const NoiseSchedule& schedule, std::mt19937_64& rng,
                       int n);
VectorXd p_sample_loop(DenoiserNet& net, const VectorXd& token, const NoiseSchedule& schedule,
                       std::mt19937_64& rng, int n);

using TokenTable = std::vector<VectorXd>;

/// Binary checkpoint: magic, version, layer shapes and row-major weights,
/// adapter, frozen flag, token table. Little-endian IEEE doubles.
void save_checkpoint(std::ostream& out, const DenoiserNet& net, const TokenTable& tokens);
std::pair<DenoiserNet, TokenTable> load_checkpoint(std::istream& in);

// ---------------------------------------------------------------------------

template <class Derived>
void AdamSlot::step(Eigen::DenseBase<Derived>& param, const Eigen::Ref<const MatrixXd>& grad, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
    throw NetError("AdamSlot: gradient shape does not match parameter");
  }
  if (m_.size() == 0) {
    m_ = MatrixXd::Zero(grad.rows(), grad.cols());
    v_ = MatrixXd::Zero(grad.rows(), grad.cols());
  }
  ++t_;
  m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
  v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  param.derived() -= (lr * (m_ / c1).array() / ((v_ / c2).array().sqrt() + kEps)).matrix();
}

}  // namespace fllp

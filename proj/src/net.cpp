// SPDX-License-Identifier: Apache-2.0

#include "fllp/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace fllp {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

MatrixXd activate(const MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return z;
    case Activation::kSiLU:
      return z.unaryExpr([](double v) { return v * sigmoid(v); });
  }
  throw NetError("unknown activation");
}

MatrixXd activation_derivative(const MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return MatrixXd::Ones(z.rows(), z.cols());
    case Activation::kSiLU:
      return z.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
  }
  throw NetError("unknown activation");
}

}  // namespace

VectorXd timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw NetError("timestep_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  VectorXd e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = std::sin(t * freq);
    e(half + i) = std::cos(t * freq);
  }
  return e;
}

DenoiserNet::DenoiserNet(const NetConfig& cfg, std::mt19937_64& rng)
    : time_dim_(cfg.time_dim), token_dim_(cfg.token_dim) {
  if (cfg.hidden_layers < 1 || cfg.hidden_width < 1 || cfg.token_dim < 1) {
    throw NetError("DenoiserNet: invalid configuration");
  }
  int fan_in = input_dim();
  for (int l = 0; l <= cfg.hidden_layers; ++l) {
    const bool last = l == cfg.hidden_layers;
    const int fan_out = last ? 1 : cfg.hidden_width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer layer;
    layer.weight = MatrixXd::NullaryExpr(fan_out, fan_in, [&] { return u(rng); });
    layer.bias = VectorXd::NullaryExpr(fan_out, [&] { return u(rng); });
    layer.activation = last ? Activation::kIdentity : Activation::kSiLU;
    layers_.push_back(std::move(layer));
    fan_in = fan_out;
  }
  adapter_ = MatrixXd::Zero(layers_.front().weight.rows(), layers_.front().weight.cols());
}

DenoiserNet::DenoiserNet(std::vector<Layer> layers, int time_dim, int token_dim)
    : layers_(std::move(layers)), time_dim_(time_dim), token_dim_(token_dim) {
  if (layers_.empty()) throw NetError("DenoiserNet: no layers");
  if (layers_.front().weight.cols() != input_dim()) throw NetError("DenoiserNet: first layer input width mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    if (L.bias.size() != L.weight.rows()) throw NetError("DenoiserNet: bias size mismatch");
    if (l > 0 && L.weight.cols() != layers_[l - 1].weight.rows()) throw NetError("DenoiserNet: layer widths do not chain");
  }
  if (layers_.back().weight.rows() != 1) throw NetError("DenoiserNet: output layer must be scalar");
  adapter_ = MatrixXd::Zero(layers_.front().weight.rows(), layers_.front().weight.cols());
}

void DenoiserNet::set_adapter(const MatrixXd& a) {
  if (a.rows() != adapter_.rows() || a.cols() != adapter_.cols()) throw NetError("set_adapter: shape mismatch");
  adapter_ = a;
}

VectorXd DenoiserNet::forward(const VectorXd& x_t, std::span<const int> t, const VectorXd& token,
                              int num_timesteps) {
  const Eigen::Index batch = x_t.size();
  if (static_cast<Eigen::Index>(t.size()) != batch) throw NetError("forward: timestep count != batch size");
  if (token.size() != token_dim_) throw NetError("forward: token dimension mismatch");
  if (temb_table_.cols() != num_timesteps) {
    temb_table_.resize(time_dim_, num_timesteps);
    for (int ts = 1; ts <= num_timesteps; ++ts) temb_table_.col(ts - 1) = timestep_embedding(ts, time_dim_);
  }
  MatrixXd input(input_dim(), batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const int ts = t[static_cast<std::size_t>(j)];
    if (ts < 1 || ts > num_timesteps) {
      throw NetError("forward: timestep " + std::to_string(ts) + " outside [1, " + std::to_string(num_timesteps) + "]");
    }
    input(0, j) = x_t(j);
    input.col(j).segment(1, time_dim_) = temb_table_.col(ts - 1);
    input.col(j).tail(token_dim_) = token;
  }

  cache_.inputs.clear();
  cache_.pre.clear();
  MatrixXd h = std::move(input);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    MatrixXd z = (l == 0 ? MatrixXd(L.weight + adapter_) : L.weight) * h;
    z.colwise() += L.bias;
    cache_.inputs.push_back(std::move(h));
    h = activate(z, L.activation);
    cache_.pre.push_back(std::move(z));
    if (static_cast<int>(l) == mid_layer()) cache_.mid = h;
  }
  cache_.valid = true;
  return h.row(0).transpose();
}

const MatrixXd& DenoiserNet::mid_activation() const {
  if (!cache_.valid) throw NetError("mid_activation: no forward pass recorded");
  return cache_.mid;
}

NetGradients DenoiserNet::backward(const VectorXd& d_out, const MatrixXd* d_mid) {
  if (!cache_.valid) throw NetError("backward called without a preceding forward");
  const Eigen::Index batch = cache_.inputs.front().cols();
  if (d_out.size() != batch) throw NetError("backward: output gradient size mismatch");
  if (d_mid && (d_mid->rows() != cache_.mid.rows() || d_mid->cols() != batch)) {
    throw NetError("backward: middle-activation gradient shape mismatch");
  }

  NetGradients g;
  if (!frozen_) {
    g.weights.resize(layers_.size());
    g.biases.resize(layers_.size());
  }
  // delta holds dL/d(post-activation) of the current layer's output.
  MatrixXd delta = d_out.transpose();
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const auto& L = layers_[static_cast<std::size_t>(l)];
    if (l == mid_layer() && d_mid) delta += *d_mid;
    const MatrixXd dz = delta.cwiseProduct(activation_derivative(cache_.pre[static_cast<std::size_t>(l)], L.activation));
    const MatrixXd& in = cache_.inputs[static_cast<std::size_t>(l)];
    if (!frozen_) {
      g.weights[static_cast<std::size_t>(l)] = dz * in.transpose();
      g.biases[static_cast<std::size_t>(l)] = dz.rowwise().sum();
    }
    if (l == 0) {
      g.adapter = dz * in.transpose();
      const MatrixXd d_in = (L.weight + adapter_).transpose() * dz;
      g.token = d_in.bottomRows(token_dim_).rowwise().sum();
    } else {
      delta = L.weight.transpose() * dz;
    }
  }
  return g;
}

std::uint64_t DenoiserNet::weights_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const double* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& L : layers_) {
    feed(L.weight.data(), L.weight.size());
    feed(L.bias.data(), L.bias.size());
  }
  return h;
}

NoiseSchedule::NoiseSchedule(int T, double beta_start, double beta_end) : timesteps(T) {
  if (T < 2) throw NetError("NoiseSchedule: need at least 2 timesteps");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw NetError("NoiseSchedule: betas must satisfy 0 < beta_start < beta_end < 1");
  }
  betas = VectorXd::LinSpaced(T, beta_start, beta_end);
  alpha_bars.resize(T);
  double acc = 1.0;
  for (int i = 0; i < T; ++i) {
    acc *= 1.0 - betas(i);
    alpha_bars(i) = acc;
  }
}

NoiseSchedule NoiseSchedule::linear_default(int T) {
  if (T < 21) throw NetError("NoiseSchedule: the default schedule needs at least 21 timesteps");
  return NoiseSchedule(T, 0.1 / T, 20.0 / T);
}

double q_sample(double x0, int t, double eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.timesteps) throw NetError("q_sample: timestep out of range");
  return q_sample(x0, schedule.alpha_bar(t), eps);
}

VectorXd p_sample_loop(const NoisePredictor& predictor, const NoiseSchedule& schedule, std::mt19937_64& rng,
                       int n) {
  if (n <= 0) throw NetError("p_sample_loop: sample count must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd x = VectorXd::NullaryExpr(n, [&] { return normal(rng); });
  for (int t = schedule.timesteps; t >= 1; --t) {
    const double beta = schedule.beta(t);
    const double abar = schedule.alpha_bar(t);
    const VectorXd eps = predictor(x, t);
    x = (x - (beta / std::sqrt(1.0 - abar)) * eps) / std::sqrt(1.0 - beta);
    if (t > 1) {
      const double sigma = std::sqrt(beta);
      for (Eigen::Index i = 0; i < n; ++i) x(i) += sigma * normal(rng);
    }
  }
  return x;
}

VectorXd p_sample_loop(DenoiserNet& net, const VectorXd& token, const NoiseSchedule& schedule,
                       std::mt19937_64& rng, int n) {
  std::vector<int> ts(static_cast<std::size_t>(std::max(n, 0)));
  return p_sample_loop(
      [&](const VectorXd& x, int t) {
        std::fill(ts.begin(), ts.end(), t);
        return net.forward(x, ts, token, schedule.timesteps);
      },
      schedule, rng, n);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'L', 'L', 'P', 'N', 'E', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw NetError("checkpoint: truncated stream");
  return v;
}

void put_matrix(std::ostream& out, const MatrixXd& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
}

MatrixXd get_matrix(std::istream& in) {
  const auto rows = get<std::uint32_t>(in);
  const auto cols = get<std::uint32_t>(in);
  if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) throw NetError("checkpoint: implausible matrix size");
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in);
  return m;
}

}  // namespace

void save_checkpoint(std::ostream& out, const DenoiserNet& net, const TokenTable& tokens) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.time_dim()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.token_dim()));
  put<std::uint8_t>(out, net.frozen() ? 1 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& L : net.layers()) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(L.activation));
    put_matrix(out, L.weight);
    put_matrix(out, L.bias);
  }
  put_matrix(out, net.adapter());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tokens.size()));
  for (const auto& t : tokens) put_matrix(out, t);
  if (!out) throw NetError("checkpoint: write failed");
}

std::pair<DenoiserNet, TokenTable> load_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw NetError("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw NetError("checkpoint: unsupported version " + std::to_string(version));
  const int time_dim = static_cast<int>(get<std::uint32_t>(in));
  const int token_dim = static_cast<int>(get<std::uint32_t>(in));
  const bool frozen = get<std::uint8_t>(in) != 0;
  const auto n_layers = get<std::uint32_t>(in);
  std::vector<Layer> layers(n_layers);
  for (auto& L : layers) {
    const auto act = get<std::uint8_t>(in);
    if (act > 1) throw NetError("checkpoint: unknown activation tag");
    L.activation = static_cast<Activation>(act);
    L.weight = get_matrix(in);
    MatrixXd b = get_matrix(in);
    if (b.cols() != 1) throw NetError("checkpoint: bias is not a column");
    L.bias = b.col(0);
  }
  DenoiserNet net(std::move(layers), time_dim, token_dim);
  net.set_adapter(get_matrix(in));
  net.set_frozen(frozen);
  const auto n_tokens = get<std::uint32_t>(in);
  TokenTable tokens;
  for (std::uint32_t i = 0; i < n_tokens; ++i) {
    MatrixXd t = get_matrix(in);
    if (t.cols() != 1) throw NetError("checkpoint: token is not a column");
    tokens.emplace_back(t.col(0));
  }
  return {std::move(net), std::move(tokens)};
}

}  // namespace fllp

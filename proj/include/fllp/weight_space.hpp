// SPDX-License-Identifier: Apache-2.0
//
// Shared-subspace reconstruction loss over per-task weight deltas,
// its alternating minimisation, Elastic Weight Aggregation and the total
// training-loss composition.

#pragma once

#include "fllp/manifold.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace fllp {

class WeightSpaceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// weights[task][layer] is the a x b delta of that layer for that task.
template <class Scalar>
using TaskWeights = std::vector<std::vector<Matrix<Scalar>>>;

/// Layer-wise basis W*^l (r x b) and per-task projections H_i^l (a x r).
template <class Scalar>
struct SharedSubspace {
  std::vector<Matrix<Scalar>> basis;                    // [layer]
  std::vector<std::vector<Matrix<Scalar>>> projection;  // [task][layer]
};

template <class Scalar>
struct SubspaceGrads {
  std::vector<Matrix<Scalar>> basis;
  std::vector<std::vector<Matrix<Scalar>>> projection;
};

/// Default subspace rank: min(a, b) / 4 rounded up.
inline Eigen::Index default_subspace_rank(Eigen::Index rows, Eigen::Index cols) {
  return std::max<Eigen::Index>(1, (std::min(rows, cols) + 3) / 4);
}

namespace detail {

template <class Scalar>
void check_compose(const TaskWeights<Scalar>& w, const SharedSubspace<Scalar>& s) {
  if (w.size() != s.projection.size()) {
    throw WeightSpaceError("subspace: " + std::to_string(w.size()) + " tasks but " +
                           std::to_string(s.projection.size()) + " projection sets");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].size() != s.basis.size() || s.projection[i].size() != s.basis.size()) {
      throw WeightSpaceError("subspace: layer count mismatch for task " + std::to_string(i));
    }
    for (std::size_t l = 0; l < w[i].size(); ++l) {
      const auto& h = s.projection[i][l];
      const auto& b = s.basis[l];
      if (h.cols() != b.rows() || h.rows() != w[i][l].rows() || b.cols() != w[i][l].cols()) {
        throw WeightSpaceError("subspace: shapes do not compose at task " + std::to_string(i) +
                               ", layer " + std::to_string(l));
      }
    }
  }
}

}  // namespace detail

/// Sum over tasks and layers of ||dW - H W*||_F^2.
template <class Scalar>
Scalar subspace_loss(const TaskWeights<Scalar>& weights, const SharedSubspace<Scalar>& sub) {
  detail::check_compose(weights, sub);
  Scalar loss = Scalar(0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t l = 0; l < weights[i].size(); ++l) {
      loss += (weights[i][l] - sub.projection[i][l] * sub.basis[l]).squaredNorm();
    }
  }
  return loss;
}

template <class Scalar>
SubspaceGrads<Scalar> subspace_loss_grads(const TaskWeights<Scalar>& weights, const SharedSubspace<Scalar>& sub) {
  detail::check_compose(weights, sub);
  SubspaceGrads<Scalar> g;
  g.basis.reserve(sub.basis.size());
  for (const auto& b : sub.basis) g.basis.push_back(Matrix<Scalar>::Zero(b.rows(), b.cols()));
  g.projection.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t l = 0; l < weights[i].size(); ++l) {
      const Matrix<Scalar> resid = weights[i][l] - sub.projection[i][l] * sub.basis[l];
      g.projection[i].push_back(Scalar(-2) * resid * sub.basis[l].transpose());
      g.basis[l].noalias() -= Scalar(2) * sub.projection[i][l].transpose() * resid;
    }
  }
  return g;
}

/// Least-squares H minimising ||dW - H W*||_F for fixed W* (minimum-norm
/// solution when W* is rank deficient).
template <class Scalar>
Matrix<Scalar> solve_projection(const Matrix<Scalar>& delta, const Matrix<Scalar>& basis) {
  if (delta.cols() != basis.cols()) throw WeightSpaceError("solve_projection: column mismatch");
  const Matrix<Scalar> bt = basis.transpose();
  return bt.completeOrthogonalDecomposition().solve(delta.transpose()).transpose();
}

/// One alternating step: every H is refit by least squares, then each W*
/// takes a gradient step of size 1/L, with L = 2 lambda_max(sum H^T H) the
/// Lipschitz constant of the basis gradient. Neither half can increase
/// the loss.
template <class Scalar>
void alternating_step(const TaskWeights<Scalar>& weights, SharedSubspace<Scalar>& sub) {
  detail::check_compose(weights, sub);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t l = 0; l < weights[i].size(); ++l) {
      sub.projection[i][l] = solve_projection(weights[i][l], sub.basis[l]);
    }
  }
  const auto grads = subspace_loss_grads(weights, sub);
  for (std::size_t l = 0; l < sub.basis.size(); ++l) {
    Matrix<Scalar> gram = Matrix<Scalar>::Zero(sub.basis[l].rows(), sub.basis[l].rows());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      gram.noalias() += sub.projection[i][l].transpose() * sub.projection[i][l];
    }
    const Scalar lambda = Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>(gram, Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .maxCoeff();
    if (lambda > Scalar(0)) sub.basis[l] -= grads.basis[l] / (Scalar(2) * lambda);
  }
}

/// Elastic Weight Aggregation.
///
/// concept_tokens[i] holds concept i's token embeddings as rows and
/// `prompt` the prompt embeddings as rows. M_i is the largest dot
/// product between a token row of concept i and a prompt row; the
/// per-concept coefficients are psi = M / ||M||_2 (all zero when M = 0).
/// Returns one merged matrix per layer.
template <class Scalar>
std::vector<Matrix<Scalar>> ewa_aggregate(const TaskWeights<Scalar>& weights,
                                          const std::vector<Matrix<Scalar>>& concept_tokens,
                                          const Matrix<Scalar>& prompt) {
  if (weights.empty()) throw WeightSpaceError("ewa: no concepts");
  if (weights.size() != concept_tokens.size()) {
    throw WeightSpaceError("ewa: " + std::to_string(weights.size()) + " weight sets but " +
                           std::to_string(concept_tokens.size()) + " token sets");
  }
  if (prompt.rows() < 1) throw WeightSpaceError("ewa: empty prompt");
  Vector<Scalar> m(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t i = 0; i < concept_tokens.size(); ++i) {
    const auto& tok = concept_tokens[i];
    if (tok.rows() < 1 || tok.cols() != prompt.cols()) {
      throw WeightSpaceError("ewa: token embeddings of concept " + std::to_string(i) +
                             " do not match the prompt dimension");
    }
    m(static_cast<Eigen::Index>(i)) = (tok * prompt.transpose()).maxCoeff();
  }
  const Scalar norm = m.norm();
  const Vector<Scalar> psi = norm > Scalar(0) ? Vector<Scalar>(m / norm) : Vector<Scalar>::Zero(m.size());

  const std::size_t layers = weights.front().size();
  std::vector<Matrix<Scalar>> merged;
  merged.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix<Scalar> acc = Matrix<Scalar>::Zero(weights.front()[l].rows(), weights.front()[l].cols());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i].size() != layers || weights[i][l].rows() != acc.rows() || weights[i][l].cols() != acc.cols()) {
        throw WeightSpaceError("ewa: layer shapes differ between concepts");
      }
      acc.noalias() += psi(static_cast<Eigen::Index>(i)) * weights[i][l];
    }
    merged.push_back(std::move(acc));
  }
  return merged;
}

/// mse + gamma1 * entail + gamma2 * l1.
template <class Scalar>
Scalar total_loss(Scalar mse, Scalar entail, Scalar l1, Scalar gamma1, Scalar gamma2) {
  return mse + gamma1 * entail + gamma2 * l1;
}

}  // namespace fllp

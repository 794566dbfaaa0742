// SPDX-License-Identifier: Apache-2.0
//
// Append-only registry of learned concepts and the nearest-neighbour walk
// that builds a new concept's parent chain in hyperbolic space.

#pragma once

#include "fllp/manifold.hpp"

#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fllp {

template <class Scalar>
struct ConceptRecord {
  int id = 0;                          // arrival order, 0-based
  Vector<Scalar> token_embedding;      // averaged learned token embedding
  Vector<Scalar> attention_summary;    // timestep-weighted attention summary
  Vector<Scalar> feature_mean;         // averaged source feature
};

struct ParentChain {
  std::vector<int> parents;  // nearest first

  bool empty() const { return parents.empty(); }
  std::size_t size() const { return parents.size(); }
  friend bool operator==(const ParentChain&, const ParentChain&) = default;
};

/// Sum over timesteps ts = 1..T of map(ts) / ts. No normalisation.
template <class Scalar>
Vector<Scalar> attention_summary(std::span<const Vector<Scalar>> maps) {
  if (maps.empty()) throw std::invalid_argument("attention_summary: empty sequence");
  Vector<Scalar> acc = Vector<Scalar>::Zero(maps.front().size());
  for (std::size_t ts = 1; ts <= maps.size(); ++ts) {
    const auto& m = maps[ts - 1];
    if (m.size() != acc.size()) throw std::invalid_argument("attention_summary: maps differ in shape");
    acc += m / static_cast<Scalar>(ts);
  }
  return acc;
}

template <class Scalar>
class ConceptRegistry {
 public:
  ConceptRegistry(Eigen::Index embedding_dim, Eigen::Index attention_dim)
      : embedding_dim_(embedding_dim), attention_dim_(attention_dim) {
    if (embedding_dim < 1 || attention_dim < 1) {
      throw std::invalid_argument("ConceptRegistry: dimensions must be >= 1");
    }
  }

  Eigen::Index embedding_dim() const { return embedding_dim_; }
  Eigen::Index attention_dim() const { return attention_dim_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ConceptRecord<Scalar>& at(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= records_.size()) {
      throw std::out_of_range("ConceptRegistry: unknown concept id " + std::to_string(id));
    }
    return records_[static_cast<std::size_t>(id)];
  }
  std::span<const ConceptRecord<Scalar>> records() const { return records_; }

  /// Stores a concept from its per-timestep attention maps (ts = 1..T).
  const ConceptRecord<Scalar>& register_concept(const Vector<Scalar>& token_embedding,
                                                std::span<const Vector<Scalar>> attention_maps,
                                                const Vector<Scalar>& feature_mean) {
    return add(token_embedding, attention_summary(attention_maps), feature_mean);
  }

  /// Stores a concept whose attention summary has already been computed.
  const ConceptRecord<Scalar>& add(const Vector<Scalar>& token_embedding, const Vector<Scalar>& summary,
                                   const Vector<Scalar>& feature_mean) {
    check(token_embedding, embedding_dim_, "token embedding");
    check(summary, attention_dim_, "attention summary");
    check(feature_mean, embedding_dim_, "feature mean");
    ConceptRecord<Scalar> r;
    r.id = static_cast<int>(records_.size());
    r.token_embedding = token_embedding;
    r.attention_summary = summary;
    r.feature_mean = feature_mean;
    records_.push_back(std::move(r));
    return records_.back();
  }

 private:
  static void check(const Vector<Scalar>& v, Eigen::Index dim, const char* what) {
    if (v.size() != dim) {
      throw std::invalid_argument(std::string("ConceptRegistry: ") + what + " has dimension " +
                                  std::to_string(v.size()) + ", expected " + std::to_string(dim));
    }
    if (!v.allFinite()) throw std::invalid_argument(std::string("ConceptRegistry: non-finite ") + what);
  }

  Eigen::Index embedding_dim_;
  Eigen::Index attention_dim_;
  std::vector<ConceptRecord<Scalar>> records_;
};

/// Builds the parent chain of a new concept.
///
/// Every registered token embedding and the new feature are lifted with
/// exp_map_origin. Starting at the new point, the walk repeatedly hops to
/// the geodesically nearest pool member other than the current one and
/// stops when that member was already visited or is the new concept
/// itself. Ties go to the smallest id, and the new concept loses all ties.
template <class Scalar>
ParentChain parent_search(const Vector<Scalar>& new_feature, const ConceptRegistry<Scalar>& registry,
                          const Curvature<Scalar>& k) {
  if (new_feature.size() != registry.embedding_dim()) {
    throw std::invalid_argument("parent_search: feature dimension does not match the registry");
  }
  constexpr int kNew = -1;
  const auto records = registry.records();
  std::vector<HyperbolicPoint<Scalar>> pool;
  pool.reserve(records.size() + 1);
  for (const auto& r : records) pool.push_back(exp_map_origin(r.token_embedding, k));
  const auto query = exp_map_origin(new_feature, k);

  auto point_of = [&](int idx) -> const HyperbolicPoint<Scalar>& {
    return idx == kNew ? query : pool[static_cast<std::size_t>(idx)];
  };

  ParentChain chain;
  std::vector<bool> visited(records.size(), false);
  int current = kNew;
  while (true) {
    int best = kNew;
    Scalar best_dist = std::numeric_limits<Scalar>::infinity();
    for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
      if (i == current) continue;
      const Scalar d = geodesic_distance(point_of(current), pool[static_cast<std::size_t>(i)], k);
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    if (current != kNew) {
      const Scalar d = geodesic_distance(point_of(current), query, k);
      if (d < best_dist) best = kNew;
    }
    if (best == kNew || visited[static_cast<std::size_t>(best)]) break;
    visited[static_cast<std::size_t>(best)] = true;
    chain.parents.push_back(best);
    current = best;
  }
  return chain;
}

/// Parents' attention summaries lifted to the hyperboloid, in chain order.
template <class Scalar>
std::vector<HyperbolicPoint<Scalar>> chain_points(const ParentChain& chain, const ConceptRegistry<Scalar>& registry,
                                                  const Curvature<Scalar>& k) {
  std::vector<HyperbolicPoint<Scalar>> out;
  out.reserve(chain.size());
  for (int id : chain.parents) out.push_back(exp_map_origin(registry.at(id).attention_summary, k));
  return out;
}

}  // namespace fllp

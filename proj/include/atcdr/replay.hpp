#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "atcdr/error.hpp"

namespace atcdr {

struct PerConfig {
  double alpha = 0.6;
  double eps = 0.05;
  double beta_start = 0.4;
  double beta_step = 0.0025;

  /// Sampling priority for a TD error: (|delta| + eps)^alpha.
  double priority(double td) const { return std::pow(std::abs(td) + eps, alpha); }

  /// Importance-sampling exponent after `steps` annealing steps.
  double beta(std::size_t steps) const { return std::min(1.0, beta_start + static_cast<double>(steps) * beta_step); }
};

/// Binary sum tree over a fixed number of leaves; prefix-sum descent picks a
/// leaf with probability proportional to its value.
class SumTree {
 public:
  explicit SumTree(std::size_t leaves) : leaves_(std::bit_ceil(std::max<std::size_t>(leaves, 1))), tree_(2 * leaves_, 0.0) {}

  void set(std::size_t i, double value) {
    std::size_t node = leaves_ + i;
    tree_[node] = value;
    for (node /= 2; node >= 1; node /= 2) tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
  }

  double get(std::size_t i) const { return tree_[leaves_ + i]; }
  double total() const { return tree_[1]; }

  /// Leaf whose cumulative interval contains `prefix` in [0, total).
  std::size_t find(double prefix) const {
    std::size_t node = 1;
    while (node < leaves_) {
      const std::size_t left = 2 * node;
      if (prefix < tree_[left] || tree_[left + 1] <= 0.0) {
        node = left;
      } else {
        prefix -= tree_[left];
        node = left + 1;
      }
    }
    return node - leaves_;
  }

 private:
  std::size_t leaves_;
  std::vector<double> tree_;
};

struct ReplaySample {
  std::vector<std::size_t> indices;
  std::vector<double> weights;  // importance weights, max-normalised within the batch
};

/// Proportional prioritized replay over a ring of `capacity` items. New items
/// enter at the largest priority seen so far.
template <class T>
class PrioritizedBuffer {
 public:
  PrioritizedBuffer(std::size_t capacity, PerConfig cfg = {}) : cfg_(cfg), capacity_(capacity), tree_(capacity) {
    if (capacity == 0) throw Error("replay: capacity must be positive", "invalid");
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  std::size_t add(T item) {
    const std::size_t slot = next_;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[slot] = std::move(item);
    }
    tree_.set(slot, max_priority_);
    next_ = (next_ + 1) % capacity_;
    return slot;
  }

  /// Draws `count` indices with replacement. Throws until the buffer holds
  /// at least `count` items.
  template <class Rng>
  ReplaySample sample(std::size_t count, double beta, Rng& rng) const {
    if (count == 0) throw Error("replay: empty sample requested", "invalid");
    if (items_.size() < count)
      throw Error("replay: sampling before warmup (" + std::to_string(items_.size()) + " < " +
                      std::to_string(count) + " items)",
                  "not_ready");
    ReplaySample out;
    std::uniform_real_distribution<double> u(0.0, tree_.total());
    const double total = tree_.total();
    const double n = static_cast<double>(items_.size());
    double max_w = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t i = tree_.find(u(rng));
      if (i >= items_.size()) i = items_.size() - 1;
      out.indices.push_back(i);
      const double w = std::pow(tree_.get(i) / total * n, -beta);
      out.weights.push_back(w);
      max_w = std::max(max_w, w);
    }
    for (double& w : out.weights) w /= max_w;
    return out;
  }

  void update(std::size_t index, double td) {
    if (index >= items_.size()) throw Error("replay: index out of range", "invalid");
    const double p = cfg_.priority(td);
    tree_.set(index, p);
    max_priority_ = std::max(max_priority_, p);
  }

  /// Sampling probability of item `i`.
  double probability(std::size_t i) const { return tree_.get(i) / tree_.total(); }
  double priority(std::size_t i) const { return tree_.get(i); }

  const T& operator[](std::size_t i) const { return items_.at(i); }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const PerConfig& config() const { return cfg_; }

 private:
  PerConfig cfg_;
  std::size_t capacity_;
  SumTree tree_;
  std::vector<T> items_;
  std::size_t next_{};
  double max_priority_{1.0};
};

}  // namespace atcdr

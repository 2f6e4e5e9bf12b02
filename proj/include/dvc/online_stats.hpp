#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dvc/mlp.hpp"

namespace dvc {

/// Welford running mean / sum of squared deviations, one coordinate per entry.
class WelfordVector {
 public:
  WelfordVector() = default;
  explicit WelfordVector(std::size_t dim) : mean_(Vector::Zero(dim)), m2_(Vector::Zero(dim)) {}

  void update(const Vector& v);

  std::size_t count() const noexcept { return count_; }
  const Vector& mean() const noexcept { return mean_; }
  const Vector& m2() const noexcept { return m2_; }
  /// Unbiased (n - 1) variance; zero vector while count < 2.
  Vector variance() const;

 private:
  std::size_t count_ = 0;
  Vector mean_;
  Vector m2_;
};

class RunningMoments {
 public:
  void update(double x);

  std::size_t count() const noexcept { return count_; }
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return count_ < 2 ? 0.0 : m2_ / static_cast<double>(count_ - 1); }
  double stddev() const;

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Fixed-capacity ring of recent values with an exact median.
class MedianRing {
 public:
  explicit MedianRing(std::size_t capacity = 512) : capacity_(capacity) {}

  void push(double v);
  bool empty() const noexcept { return values_.empty(); }
  std::size_t size() const noexcept { return values_.size(); }
  /// Even counts average the two middle values. Requires a non-empty ring.
  double median() const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<double> values_;
  mutable std::optional<double> cached_;
};

/// Per-layer activation statistics (layers 1..L).
struct LayerStats {
  WelfordVector activations;
  MedianRing norms;
};

/// The gradient that layer-wise relevance compares at layer l in [1, L]:
/// dl/dh_l for hidden layers and dl/dz_L (logits) for the output layer.
const Vector& layer_gradient(const LayerGradients& grads, std::size_t layer);

class GradientMomentum {
 public:
  explicit GradientMomentum(double beta = 0.9) : beta_(beta) {}

  void update(const LayerGradients& grads);

  bool warm() const noexcept { return updates_ > 0; }
  std::size_t updates() const noexcept { return updates_; }
  double beta() const noexcept { return beta_; }
  const Vector& flat() const noexcept { return flat_; }
  double flat_norm() const noexcept { return flat_norm_; }
  /// `layer` in [1, L].
  const Vector& layer(std::size_t layer) const { return layers_.at(layer - 1); }

 private:
  double beta_;
  std::size_t updates_ = 0;
  Vector flat_;
  double flat_norm_ = 0.0;
  std::vector<Vector> layers_;
};

/// Sliding window of (model version, loss) pairs per sample digest.
class LossHistory {
 public:
  explicit LossHistory(std::size_t window = 8) : window_(window) {}

  /// Re-recording under the version already at the back overwrites that entry.
  void record(std::uint64_t digest, std::uint64_t model_version, double loss);
  /// Population variance of the window; absent with fewer than two entries.
  std::optional<double> variance(std::uint64_t digest) const;
  std::size_t entries(std::uint64_t digest) const;
  double max_variance() const noexcept { return max_variance_; }
  std::size_t window() const noexcept { return window_; }

 private:
  std::size_t window_;
  std::unordered_map<std::uint64_t, std::deque<std::pair<std::uint64_t, double>>> rings_;
  double max_variance_ = 0.0;
};

struct OnlineStatsConfig {
  double momentum_decay = 0.9;
  std::size_t norm_buffer = 512;
  double default_bandwidth = 1.0;
  double bandwidth_floor = 1e-6;
};

/// Streaming reference statistics maintained over selected samples.
class OnlineStats {
 public:
  OnlineStats(const std::vector<std::size_t>& layer_dims, OnlineStatsConfig config = {});

  /// Skips (and counts) observations with non-finite activations or gradients.
  void update(const ForwardTrace& trace, const LayerGradients& grads);

  std::size_t num_layers() const noexcept { return layers_.size(); }
  const LayerStats& layer(std::size_t l) const { return layers_.at(l - 1); }
  /// Throws a cold-start error while no norm has been buffered.
  double median_norm(std::size_t l) const;
  double bandwidth(std::size_t l) const;
  const GradientMomentum& momentum() const noexcept { return momentum_; }
  std::size_t warnings() const noexcept { return warnings_; }
  std::size_t observations() const noexcept { return observations_; }

 private:
  OnlineStatsConfig config_;
  std::vector<LayerStats> layers_;
  GradientMomentum momentum_;
  std::size_t warnings_ = 0;
  std::size_t observations_ = 0;
};

}  // namespace dvc

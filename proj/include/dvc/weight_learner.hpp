#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Cholesky>

#include "dvc/mlp.hpp"
#include "dvc/value_metrics.hpp"

namespace dvc {

/// Euclidean projection onto {w >= 0, sum(w) = 1} (sort and threshold).
Vector project_to_simplex(const Vector& v);

/// Projects every weight group independently; coordinates switched off by
/// `mask` are pinned to zero.
MetricWeights project_weights(const MetricWeights& w, const AblationMask& mask = {});

struct GpParams {
  double length_scale = 1.2;
  double signal_variance = 1.0;
  double jitter = 1e-6;
  double prior_mean = 0.0;
};

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact GP regression with a squared-exponential kernel.
class GpSurrogate {
 public:
  explicit GpSurrogate(GpParams params = {}) : params_(params) {}

  /// Escalates the jitter x10 up to three times before giving up with a
  /// numerics error.
  void fit(const std::vector<Vector>& xs, const std::vector<double>& ys);
  GpPrediction predict(const Vector& x) const;

  bool fitted() const noexcept { return !xs_.empty(); }
  std::size_t size() const noexcept { return xs_.size(); }
  double effective_jitter() const noexcept { return jitter_; }
  const GpParams& params() const noexcept { return params_; }
  double kernel(const Vector& a, const Vector& b) const;

 private:
  GpParams params_;
  std::vector<Vector> xs_;
  Vector alpha_;
  Eigen::LLT<Matrix> chol_;
  double jitter_ = 0.0;
};

/// Maximisation convention: EI = (m - best) Phi(z) + s phi(z), z = (m - best) / s.
double expected_improvement(double mean, double stddev, double best);
double expected_improvement(const GpSurrogate& gp, const Vector& theta, double best);

struct ProposalConfig {
  std::size_t dirichlet_candidates = 256;
  std::size_t perturbations = 32;
  double perturbation_sigma = 0.05;
  // Shrinking-radius local search around the best candidate.
  std::size_t refine_rounds = 6;
  std::size_t refine_samples = 24;
};

struct WeightProposal {
  MetricWeights weights;
  double expected_improvement = 0.0;
};

/// Arg-max of EI over Dirichlet samples on the product of simplices and
/// perturbations of the incumbent. Returns the incumbent when no candidate
/// has positive EI.
WeightProposal propose_weights(const GpSurrogate& gp, const MetricWeights& incumbent, double best,
                               const ProposalConfig& config, const AblationMask& mask,
                               std::mt19937_64& rng);

struct WeightLearnerConfig {
  std::size_t update_every = 5;      // F
  std::size_t max_evaluations = 15;  // W
  double min_improvement = 0.002;
  std::size_t patience = 3;
  ProposalConfig proposal{};
  GpParams gp{};
};

struct WeightObservation {
  std::size_t round = 0;
  MetricWeights weights;
  double performance = 0.0;
};

/// Bayesian optimisation loop over MetricWeights.
class WeightLearner {
 public:
  WeightLearner(std::size_t layers, WeightLearnerConfig config, AblationMask mask = {});

  const MetricWeights& current() const noexcept { return current_; }
  bool due(std::size_t round) const noexcept {
    return !converged() && config_.update_every > 0 && round % config_.update_every == 0;
  }
  bool converged() const noexcept;

  /// Records the performance of `current()`, refits the surrogate and moves
  /// `current()` to the next proposal.
  WeightProposal observe(std::size_t round, double performance, std::mt19937_64& rng);

  const std::vector<WeightObservation>& history() const noexcept { return history_; }
  const MetricWeights& best_weights() const noexcept { return best_; }
  double best_performance() const noexcept { return best_perf_; }
  /// Fitted on standardised performances: (y - offset) / scale.
  const GpSurrogate& surrogate() const noexcept { return gp_; }
  double target_offset() const noexcept { return offset_; }
  double target_scale() const noexcept { return scale_; }

 private:
  WeightLearnerConfig config_;
  AblationMask mask_;
  MetricWeights current_;
  MetricWeights best_;
  double best_perf_ = -1e300;
  std::size_t stale_ = 0;
  double offset_ = 0.0;
  double scale_ = 1.0;
  GpSurrogate gp_;
  std::vector<WeightObservation> history_;
};

struct ProbeConfig {
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::ReLU;
  TrainOptions train{5, 0.05, 32};
  std::uint64_t seed = 0;
};

/// Trains a fresh probe network on the subset and returns its validation
/// accuracy. Empty subset or validation split is a configuration error.
double evaluate_performance(const Matrix& subset_x, std::span<const std::size_t> subset_y,
                            const Matrix& val_x, std::span<const std::size_t> val_y,
                            const ProbeConfig& config);

}  // namespace dvc

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dvc/grad_cache.hpp"
#include "dvc/lsh_index.hpp"
#include "dvc/mlp.hpp"
#include "dvc/online_stats.hpp"

namespace dvc {

enum class Metric : std::size_t {
  Quality = 0,
  Relevance,
  Diversity,
  GradientImpact,
  Uncertainty,
  Stability,
};

inline constexpr std::size_t kMetricCount = 6;
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "quality", "relevance", "diversity", "gradient_impact", "uncertainty", "stability"};

/// Metrics switched off for ablation runs. A disabled metric carries zero
/// weight and so has no influence on DVC.
struct AblationMask {
  std::array<bool, kMetricCount> disabled{};

  bool enabled(Metric m) const { return !disabled[static_cast<std::size_t>(m)]; }
  bool any_layer_metric() const;
  bool any_global_metric() const;

  /// Accepts "full", "no_<metric>", "layer_only", "global_only", "minimal".
  static AblationMask from_variant(std::string_view variant);
};

/// The adaptive weight vector: {lambda_1..lambda_L, mu}, {alpha, beta, gamma}
/// and {xi, zeta, eta}, each group on its own probability simplex.
struct MetricWeights {
  std::vector<double> layer;  // lambda_l
  double global = 0.0;        // mu
  std::array<double, 3> layer_metric{};   // quality, relevance, diversity
  std::array<double, 3> global_metric{};  // gradient impact, uncertainty, stability

  static MetricWeights uniform(std::size_t layers, const AblationMask& mask = {});

  std::size_t num_layers() const noexcept { return layer.size(); }
  /// Throws a configuration error unless every group is a valid simplex point.
  void validate(double tol = 1e-9) const;

  /// [lambda..., mu, alpha, beta, gamma, xi, zeta, eta]
  Vector flatten() const;
  static MetricWeights unflatten(const Vector& flat, std::size_t layers);
};

struct RawMetrics {
  std::vector<double> quality;    // per layer, (0, 1)
  std::vector<double> relevance;  // per layer, [-1, 1]
  std::vector<double> diversity;  // per layer, >= 0
  double gradient_impact = 0.0;
  double uncertainty = 0.0;
  double stability = 1.0;
  bool stability_cold_start = true;
};

/// Same layout as RawMetrics with every value squashed into [0, 1].
struct NormalizedMetrics {
  std::vector<double> quality;
  std::vector<double> relevance;
  std::vector<double> diversity;
  double gradient_impact = 0.5;
  double uncertainty = 0.5;
  double stability = 0.5;
};

struct DvcBreakdown {
  std::vector<double> lvc;
  double gvc = 0.0;
  double dvc = 0.0;
};

enum class QualityMode {
  Literal,    // sigmoid(ratio - 1)
  Symmetric,  // sigmoid(-|ratio - 1| * sharpness), peaked at the median norm
};

double sigmoid(double z);

/// `layer` arguments are 1-based, in [1, L].
double quality(const ForwardTrace& trace, const OnlineStats& stats, std::size_t layer,
               QualityMode mode = QualityMode::Literal, double sharpness = 1.0);
double relevance(const LayerGradients& grads, const GradientMomentum& momentum, std::size_t layer);
double diversity(const ForwardTrace& trace, const LshIndex& index, std::size_t layer, double sigma,
                 std::size_t total_seen, std::size_t neighbors = 32);
double gradient_impact(const LayerGradients& grads, const GradientMomentum& momentum);
/// Same value from the per-layer factors: <delta h^T, A> = delta^T A h, so the
/// flat parameter gradient is never read. Falls back to the flat form when
/// `grads` carries no deltas.
double gradient_impact(const MlpModel& model, const ForwardTrace& trace, const LayerGradients& grads,
                       const GradientMomentum& momentum);
double conditional_uncertainty(const MlpModel& model, const ForwardTrace& trace,
                               const MetricWeights& weights);
double training_stability(const LossHistory& history, std::uint64_t digest);

/// Running z-score (Welford) per metric followed by a sigmoid.
class MetricNormalizer {
 public:
  explicit MetricNormalizer(std::size_t layers);

  void observe(const RawMetrics& raw);
  NormalizedMetrics normalize(const RawMetrics& raw) const;

 private:
  std::vector<RunningMoments> quality_;
  std::vector<RunningMoments> relevance_;
  std::vector<RunningMoments> diversity_;
  RunningMoments gradient_impact_;
  RunningMoments uncertainty_;
  RunningMoments stability_;
};

/// LVC_l = a q_l + b r_l + g d_l, GVC = xi gi + zeta cu + eta ts,
/// DVC = sum_l lambda_l LVC_l + mu GVC.
DvcBreakdown compose_dvc(const NormalizedMetrics& metrics, const MetricWeights& weights);

struct ValuationOptions {
  QualityMode quality_mode = QualityMode::Literal;
  double quality_sharpness = 1.0;
  std::size_t density_neighbors = 32;
};

/// Read-only view of everything the six metrics depend on.
struct ValuationContext {
  const MlpModel* model = nullptr;
  const OnlineStats* stats = nullptr;
  const std::vector<LshIndex>* indices = nullptr;  // one per layer 1..L
  const LossHistory* history = nullptr;
  const MetricWeights* weights = nullptr;
  std::size_t total_seen = 0;
  ValuationOptions options{};
};

RawMetrics compute_raw_metrics(const ValuationContext& ctx, const SampleEvaluation& eval,
                               std::uint64_t digest);

}  // namespace dvc

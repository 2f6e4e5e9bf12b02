#include "dvc/value_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dvc/error.hpp"

namespace dvc {
namespace {

constexpr double kEntropyEps = 1e-12;

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "cosine of vectors with different sizes");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// Entropy of the L1-normalised absolute activations, epsilon-smoothed.
double activation_entropy(const Vector& h) {
  const Eigen::ArrayXd a = h.array().abs() + kEntropyEps;
  const Eigen::ArrayXd p = a / a.sum();
  return std::max(0.0, -(p * p.log()).sum());
}

double squash(const RunningMoments& m, double v) {
  const double sd = m.stddev();
  if (m.count() < 2 || !(sd > 1e-12)) return 0.5;
  return sigmoid((v - m.mean()) / sd);
}

void check_group(const double* begin, const double* end, const char* name, double tol) {
  double sum = 0.0;
  for (const double* p = begin; p != end; ++p) {
    if (!std::isfinite(*p) || *p < -tol) {
      throw Error(ErrorKind::Config, std::string(name) + " weights must be finite and non-negative");
    }
    sum += *p;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw Error(ErrorKind::Config,
                std::string(name) + " weights must sum to 1 (got " + std::to_string(sum) + ")");
  }
}

}  // namespace

bool AblationMask::any_layer_metric() const {
  return enabled(Metric::Quality) || enabled(Metric::Relevance) || enabled(Metric::Diversity);
}

bool AblationMask::any_global_metric() const {
  return enabled(Metric::GradientImpact) || enabled(Metric::Uncertainty) ||
         enabled(Metric::Stability);
}

AblationMask AblationMask::from_variant(std::string_view variant) {
  AblationMask mask;
  auto off = [&mask](Metric m) { mask.disabled[static_cast<std::size_t>(m)] = true; };
  if (variant == "full" || variant.empty()) return mask;
  if (variant == "layer_only") {
    off(Metric::GradientImpact), off(Metric::Uncertainty), off(Metric::Stability);
    return mask;
  }
  if (variant == "global_only") {
    off(Metric::Quality), off(Metric::Relevance), off(Metric::Diversity);
    return mask;
  }
  if (variant == "minimal") {
    off(Metric::Diversity), off(Metric::GradientImpact), off(Metric::Uncertainty),
        off(Metric::Stability);
    return mask;
  }
  if (variant.starts_with("no_")) {
    const std::string_view name = variant.substr(3);
    for (std::size_t i = 0; i < kMetricCount; ++i) {
      if (kMetricNames[i] == name) {
        mask.disabled[i] = true;
        return mask;
      }
    }
  }
  throw Error(ErrorKind::Config, "unknown ablation variant '" + std::string(variant) + "'");
}

MetricWeights MetricWeights::uniform(std::size_t layers, const AblationMask& mask) {
  if (layers == 0) throw Error(ErrorKind::Config, "metric weights need at least one layer");
  const bool use_layer = mask.any_layer_metric();
  const bool use_global = mask.any_global_metric();
  if (!use_layer && !use_global) throw Error(ErrorKind::Config, "every metric is disabled");

  MetricWeights w;
  const auto L = static_cast<double>(layers);
  if (use_layer && use_global) {
    w.layer.assign(layers, 1.0 / (L + 1.0));
    w.global = 1.0 / (L + 1.0);
  } else if (use_layer) {
    w.layer.assign(layers, 1.0 / L);
    w.global = 0.0;
  } else {
    w.layer.assign(layers, 0.0);
    w.global = 1.0;
  }

  auto fill = [&mask](std::array<double, 3>& group, std::size_t first) {
    std::size_t active = 0;
    for (std::size_t i = 0; i < 3; ++i) active += mask.disabled[first + i] ? 0 : 1;
    for (std::size_t i = 0; i < 3; ++i) {
      // A fully disabled group stays a valid simplex point; its outer weight is zero.
      group[i] = active == 0 ? 1.0 / 3.0 : (mask.disabled[first + i] ? 0.0 : 1.0 / double(active));
    }
  };
  fill(w.layer_metric, 0);
  fill(w.global_metric, 3);
  return w;
}

void MetricWeights::validate(double tol) const {
  if (layer.empty()) throw Error(ErrorKind::Config, "metric weights need at least one layer");
  std::vector<double> outer = layer;
  outer.push_back(global);
  check_group(outer.data(), outer.data() + outer.size(), "layer/global", tol);
  check_group(layer_metric.data(), layer_metric.data() + 3, "layer-metric", tol);
  check_group(global_metric.data(), global_metric.data() + 3, "global-metric", tol);
}

Vector MetricWeights::flatten() const {
  const auto L = static_cast<Eigen::Index>(layer.size());
  Vector flat(L + 7);
  for (Eigen::Index i = 0; i < L; ++i) flat[i] = layer[static_cast<std::size_t>(i)];
  flat[L] = global;
  for (Eigen::Index i = 0; i < 3; ++i) {
    flat[L + 1 + i] = layer_metric[static_cast<std::size_t>(i)];
    flat[L + 4 + i] = global_metric[static_cast<std::size_t>(i)];
  }
  return flat;
}

MetricWeights MetricWeights::unflatten(const Vector& flat, std::size_t layers) {
  const auto L = static_cast<Eigen::Index>(layers);
  if (flat.size() != L + 7) throw Error(ErrorKind::Shape, "flattened weight vector has the wrong size");
  MetricWeights w;
  w.layer.assign(flat.data(), flat.data() + L);
  w.global = flat[L];
  for (Eigen::Index i = 0; i < 3; ++i) {
    w.layer_metric[static_cast<std::size_t>(i)] = flat[L + 1 + i];
    w.global_metric[static_cast<std::size_t>(i)] = flat[L + 4 + i];
  }
  return w;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double quality(const ForwardTrace& trace, const OnlineStats& stats, std::size_t layer,
               QualityMode mode, double sharpness) {
  if (stats.layer(layer).norms.empty()) return 0.5;
  const double median = stats.median_norm(layer);
  if (!(median > 0.0)) return 0.5;
  const double ratio = trace.activations.at(layer).norm() / median;
  if (mode == QualityMode::Symmetric) return sigmoid(-std::abs(ratio - 1.0) * sharpness);
  return sigmoid(ratio - 1.0);
}

double relevance(const LayerGradients& grads, const GradientMomentum& momentum, std::size_t layer) {
  if (!momentum.warm()) return 0.0;
  return cosine(layer_gradient(grads, layer), momentum.layer(layer));
}

double diversity(const ForwardTrace& trace, const LshIndex& index, std::size_t layer, double sigma,
                 std::size_t total_seen, std::size_t neighbors) {
  const double density =
      index.kernel_density(trace.activations.at(layer), sigma, neighbors, std::max<std::size_t>(total_seen, 1));
  return std::max(0.0, -std::log(density));
}

double gradient_impact(const LayerGradients& grads, const GradientMomentum& momentum) {
  if (!momentum.warm()) return 0.0;
  const Vector& g = grads.param_grad_flat;
  const Vector& avg = momentum.flat();
  const double na = momentum.flat_norm();
  if (!(na > 0.0) || !(g.norm() > 0.0)) return 0.0;
  // |g| * cos(g, avg) == <g, avg> / |avg|
  return g.dot(avg) / na;
}

double gradient_impact(const MlpModel& model, const ForwardTrace& trace, const LayerGradients& grads,
                       const GradientMomentum& momentum) {
  const std::size_t layers = model.num_layers();
  if (grads.deltas.size() != layers) return gradient_impact(grads, momentum);
  if (!momentum.warm()) return 0.0;
  const Vector& avg = momentum.flat();
  const double na = momentum.flat_norm();
  if (static_cast<std::size_t>(avg.size()) != model.parameter_count()) {
    throw Error(ErrorKind::Shape, "momentum does not match the model");
  }
  if (!(na > 0.0)) return 0.0;
  double dot = 0.0, squared_norm = 0.0;
  Eigen::Index off = 0;
  for (std::size_t l = 1; l <= layers; ++l) {
    const Vector& delta = grads.deltas[l - 1];
    const Vector& h = trace.activations[l - 1];
    const Eigen::Index rows = delta.size(), cols = h.size();
    const auto a = avg.segment(off, rows * cols).reshaped(rows, cols);
    dot += delta.dot(a * h) + delta.dot(avg.segment(off + rows * cols, rows));
    squared_norm += delta.squaredNorm() * (h.squaredNorm() + 1.0);
    off += rows * cols + rows;
  }
  if (!(squared_norm > 0.0)) return 0.0;
  return dot / na;
}

double conditional_uncertainty(const MlpModel& model, const ForwardTrace& trace,
                               const MetricWeights& weights) {
  const std::size_t layers = model.num_layers();
  if (weights.layer.size() != layers) throw Error(ErrorKind::Shape, "weights/model depth mismatch");
  double cu = 0.0;
  if (model.output_kind() == OutputKind::Softmax) cu += shannon_entropy(trace.output());
  for (std::size_t l = 1; l <= layers; ++l) {
    cu += weights.layer[l - 1] * activation_entropy(trace.activations.at(l));
  }
  return cu;
}

double training_stability(const LossHistory& history, std::uint64_t digest) {
  const auto var = history.variance(digest);
  if (!var) return 1.0;
  return std::clamp(1.0 - *var / (history.max_variance() + 1e-12), 0.0, 1.0);
}

MetricNormalizer::MetricNormalizer(std::size_t layers)
    : quality_(layers), relevance_(layers), diversity_(layers) {}

void MetricNormalizer::observe(const RawMetrics& raw) {
  for (std::size_t l = 0; l < quality_.size(); ++l) {
    quality_[l].update(raw.quality[l]);
    relevance_[l].update(raw.relevance[l]);
    diversity_[l].update(raw.diversity[l]);
  }
  gradient_impact_.update(raw.gradient_impact);
  uncertainty_.update(raw.uncertainty);
  stability_.update(raw.stability);
}

NormalizedMetrics MetricNormalizer::normalize(const RawMetrics& raw) const {
  NormalizedMetrics n;
  const std::size_t layers = quality_.size();
  n.quality.resize(layers);
  n.relevance.resize(layers);
  n.diversity.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    n.quality[l] = squash(quality_[l], raw.quality[l]);
    n.relevance[l] = squash(relevance_[l], raw.relevance[l]);
    n.diversity[l] = squash(diversity_[l], raw.diversity[l]);
  }
  n.gradient_impact = squash(gradient_impact_, raw.gradient_impact);
  n.uncertainty = squash(uncertainty_, raw.uncertainty);
  n.stability = squash(stability_, raw.stability);
  return n;
}

DvcBreakdown compose_dvc(const NormalizedMetrics& metrics, const MetricWeights& weights) {
  weights.validate();
  const std::size_t layers = weights.layer.size();
  if (metrics.quality.size() != layers || metrics.relevance.size() != layers ||
      metrics.diversity.size() != layers) {
    throw Error(ErrorKind::Shape, "metric vector depth does not match the weights");
  }
  const auto& [a, b, g] = weights.layer_metric;
  const auto& [xi, zeta, eta] = weights.global_metric;
  DvcBreakdown out;
  out.lvc.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    out.lvc[l] = a * metrics.quality[l] + b * metrics.relevance[l] + g * metrics.diversity[l];
    out.dvc += weights.layer[l] * out.lvc[l];
  }
  out.gvc = xi * metrics.gradient_impact + zeta * metrics.uncertainty + eta * metrics.stability;
  out.dvc += weights.global * out.gvc;
  out.dvc = std::clamp(out.dvc, 0.0, 1.0);
  return out;
}

RawMetrics compute_raw_metrics(const ValuationContext& ctx, const SampleEvaluation& eval,
                               std::uint64_t digest) {
  const std::size_t layers = ctx.model->num_layers();
  if (ctx.indices->size() != layers || ctx.stats->num_layers() != layers) {
    throw Error(ErrorKind::Shape, "valuation context depth mismatch");
  }
  RawMetrics raw;
  raw.quality.resize(layers);
  raw.relevance.resize(layers);
  raw.diversity.resize(layers);
  const auto& momentum = ctx.stats->momentum();
  for (std::size_t l = 1; l <= layers; ++l) {
    raw.quality[l - 1] = quality(eval.trace, *ctx.stats, l, ctx.options.quality_mode,
                                 ctx.options.quality_sharpness);
    raw.relevance[l - 1] = relevance(eval.grads, momentum, l);
    raw.diversity[l - 1] = diversity(eval.trace, (*ctx.indices)[l - 1], l, ctx.stats->bandwidth(l),
                                     ctx.total_seen, ctx.options.density_neighbors);
  }
  raw.gradient_impact = gradient_impact(*ctx.model, eval.trace, eval.grads, momentum);
  raw.uncertainty = conditional_uncertainty(*ctx.model, eval.trace, *ctx.weights);
  raw.stability_cold_start = ctx.history->entries(digest) < 2;
  raw.stability = training_stability(*ctx.history, digest);
  return raw;
}

}  // namespace dvc

#include "dvc/weight_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dvc/error.hpp"

namespace dvc {
namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

// Which coordinates of each group are free to move under a mask.
struct ActiveSets {
  std::vector<bool> outer;  // lambda_1..lambda_L, mu
  std::array<bool, 3> layer_metric{};
  std::array<bool, 3> global_metric{};
};

ActiveSets active_sets(std::size_t layers, const AblationMask& mask) {
  ActiveSets a;
  a.outer.assign(layers + 1, mask.any_layer_metric());
  a.outer[layers] = mask.any_global_metric();
  for (std::size_t i = 0; i < 3; ++i) {
    a.layer_metric[i] = mask.enabled(static_cast<Metric>(i));
    a.global_metric[i] = mask.enabled(static_cast<Metric>(i + 3));
  }
  return a;
}

// Projects the active entries of `group` onto the simplex and zeroes the
// rest. A group with nothing active is projected as a whole.
template <typename Container, typename Flags>
void project_group(Container& group, const Flags& active) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (active[i]) idx.push_back(i);
  }
  if (idx.empty()) {
    for (std::size_t i = 0; i < group.size(); ++i) idx.push_back(i);
  }
  Vector v(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) v[static_cast<Eigen::Index>(k)] = group[idx[k]];
  const Vector p = project_to_simplex(v);
  for (auto& g : group) g = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) group[idx[k]] = p[static_cast<Eigen::Index>(k)];
}

template <typename Container, typename Flags>
void dirichlet_group(Container& group, const Flags& active, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  double total = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (!active[i]) continue;
    any = true;
    group[i] = gamma(rng);
    total += group[i];
  }
  if (!any) return;  // keep whatever the incumbent had
  for (std::size_t i = 0; i < group.size(); ++i) group[i] = active[i] ? group[i] / total : 0.0;
}

template <typename Container, typename Flags>
void jitter_group(Container& group, const Flags& active, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (active[i]) group[i] += noise(rng);
  }
}

MetricWeights perturb(const MetricWeights& base, const ActiveSets& active, const AblationMask& mask,
                      double sigma, std::mt19937_64& rng) {
  MetricWeights w = base;
  std::vector<double> outer = w.layer;
  outer.push_back(w.global);
  jitter_group(outer, active.outer, sigma, rng);
  w.layer.assign(outer.begin(), outer.end() - 1);
  w.global = outer.back();
  jitter_group(w.layer_metric, active.layer_metric, sigma, rng);
  jitter_group(w.global_metric, active.global_metric, sigma, rng);
  return project_weights(w, mask);
}

}  // namespace

Vector project_to_simplex(const Vector& v) {
  if (v.size() == 0) throw Error(ErrorKind::Shape, "cannot project an empty vector");
  if (!v.allFinite()) throw Error(ErrorKind::Numerics, "non-finite weight vector");
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) threshold = t;
  }
  return (v.array() - threshold).cwiseMax(0.0).matrix();
}

MetricWeights project_weights(const MetricWeights& w, const AblationMask& mask) {
  const std::size_t layers = w.num_layers();
  const ActiveSets active = active_sets(layers, mask);
  MetricWeights out = w;
  std::vector<double> outer = w.layer;
  outer.push_back(w.global);
  project_group(outer, active.outer);
  out.layer.assign(outer.begin(), outer.end() - 1);
  out.global = outer.back();
  project_group(out.layer_metric, active.layer_metric);
  project_group(out.global_metric, active.global_metric);
  return out;
}

double GpSurrogate::kernel(const Vector& a, const Vector& b) const {
  const double ell = params_.length_scale;
  return params_.signal_variance * std::exp(-(a - b).squaredNorm() / (2.0 * ell * ell));
}

void GpSurrogate::fit(const std::vector<Vector>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw Error(ErrorKind::Shape, "one target per GP input required");
  if (xs.empty()) throw Error(ErrorKind::Input, "cannot fit a GP without observations");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i].allFinite() || !std::isfinite(ys[i])) throw Error(ErrorKind::Numerics, "non-finite GP observation");
  }
  const auto n = static_cast<Eigen::Index>(xs.size());
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (xs[static_cast<std::size_t>(i)].size() != xs.front().size()) {
      throw Error(ErrorKind::Shape, "GP inputs differ in dimension");
    }
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = kernel(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(j)]);
    }
  }
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = ys[static_cast<std::size_t>(i)] - params_.prior_mean;

  double jitter = params_.jitter;
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Matrix kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Matrix> chol(kj);
    if (chol.info() == Eigen::Success) {
      chol_ = std::move(chol);
      alpha_ = chol_.solve(y);
      xs_ = xs;
      jitter_ = jitter;
      return;
    }
  }
  throw Error(ErrorKind::Numerics, "GP kernel matrix is not positive definite after jitter escalation");
}

GpPrediction GpSurrogate::predict(const Vector& x) const {
  if (!fitted()) return {params_.prior_mean, params_.signal_variance};
  const auto n = static_cast<Eigen::Index>(xs_.size());
  Vector ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks[i] = kernel(x, xs_[static_cast<std::size_t>(i)]);
  const Vector v = chol_.matrixL().solve(ks);
  return {params_.prior_mean + ks.dot(alpha_), std::max(0.0, params_.signal_variance - v.squaredNorm())};
}

double expected_improvement(double mean, double stddev, double best) {
  const double gap = mean - best;
  if (!(stddev > 0.0)) return std::max(gap, 0.0);
  const double z = gap / stddev;
  return std::max(0.0, gap * normal_cdf(z) + stddev * normal_pdf(z));
}

double expected_improvement(const GpSurrogate& gp, const Vector& theta, double best) {
  const GpPrediction p = gp.predict(theta);
  return expected_improvement(p.mean, std::sqrt(p.variance), best);
}

WeightProposal propose_weights(const GpSurrogate& gp, const MetricWeights& incumbent, double best,
                               const ProposalConfig& config, const AblationMask& mask,
                               std::mt19937_64& rng) {
  const std::size_t layers = incumbent.num_layers();
  const ActiveSets active = active_sets(layers, mask);

  WeightProposal top{incumbent, expected_improvement(gp, incumbent.flatten(), best)};
  auto consider = [&](MetricWeights&& w) {
    const double ei = expected_improvement(gp, w.flatten(), best);
    if (ei > top.expected_improvement) top = {std::move(w), ei};
  };

  for (std::size_t c = 0; c < config.dirichlet_candidates; ++c) {
    MetricWeights w = incumbent;
    std::vector<double> outer = w.layer;
    outer.push_back(w.global);
    dirichlet_group(outer, active.outer, rng);
    w.layer.assign(outer.begin(), outer.end() - 1);
    w.global = outer.back();
    dirichlet_group(w.layer_metric, active.layer_metric, rng);
    dirichlet_group(w.global_metric, active.global_metric, rng);
    consider(std::move(w));
  }
  for (std::size_t c = 0; c < config.perturbations; ++c) {
    consider(perturb(incumbent, active, mask, config.perturbation_sigma, rng));
  }
  if (!(top.expected_improvement > 0.0)) return {incumbent, 0.0};

  double radius = config.perturbation_sigma;
  for (std::size_t r = 0; r < config.refine_rounds; ++r, radius *= 0.5) {
    const MetricWeights centre = top.weights;
    for (std::size_t s = 0; s < config.refine_samples; ++s) {
      consider(perturb(centre, active, mask, radius, rng));
    }
  }
  return top;
}

WeightLearner::WeightLearner(std::size_t layers, WeightLearnerConfig config, AblationMask mask)
    : config_(config),
      mask_(mask),
      current_(MetricWeights::uniform(layers, mask)),
      best_(current_),
      gp_(config.gp) {}

bool WeightLearner::converged() const noexcept {
  return history_.size() >= config_.max_evaluations || stale_ >= config_.patience;
}

WeightProposal WeightLearner::observe(std::size_t round, double performance, std::mt19937_64& rng) {
  if (!std::isfinite(performance)) throw Error(ErrorKind::Numerics, "non-finite performance");
  history_.push_back({round, current_, performance});
  if (history_.size() == 1 || performance > best_perf_ + config_.min_improvement) {
    stale_ = 0;
  } else {
    ++stale_;
  }
  if (performance > best_perf_) {
    best_perf_ = performance;
    best_ = current_;
  }

  // The kernel assumes unit-scale targets, so performances are standardised
  // before fitting; EI is then computed against the standardised best.
  std::vector<Vector> xs;
  std::vector<double> ys;
  for (const auto& h : history_) {
    xs.push_back(h.weights.flatten());
    ys.push_back(h.performance);
  }
  const double n = static_cast<double>(ys.size());
  const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double var = 0.0;
  for (double y : ys) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / n);
  scale_ = sd > 1e-12 ? sd : 1.0;
  offset_ = mean;
  for (double& y : ys) y = (y - offset_) / scale_;
  gp_ = GpSurrogate(config_.gp);
  gp_.fit(xs, ys);

  if (converged()) {
    current_ = best_;
    return {best_, 0.0};
  }
  WeightProposal next =
      propose_weights(gp_, best_, (best_perf_ - offset_) / scale_, config_.proposal, mask_, rng);
  current_ = next.weights;
  return next;
}

double evaluate_performance(const Matrix& subset_x, std::span<const std::size_t> subset_y,
                            const Matrix& val_x, std::span<const std::size_t> val_y,
                            const ProbeConfig& config) {
  if (subset_y.empty() || val_y.empty()) {
    throw Error(ErrorKind::Config, "performance probe needs a non-empty subset and validation split");
  }
  MlpModel probe = MlpModel::classifier(config.layer_dims, config.seed, config.activation);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  train_classifier(probe, subset_x, subset_y, config.train, rng);
  return accuracy(probe, val_x, val_y);
}

}  // namespace dvc

#include "dvc/online_stats.hpp"

#include <algorithm>
#include <cmath>

#include "dvc/error.hpp"

namespace dvc {

void WelfordVector::update(const Vector& v) {
  if (count_ == 0 && mean_.size() != v.size()) {
    mean_ = Vector::Zero(v.size());
    m2_ = Vector::Zero(v.size());
  }
  if (v.size() != mean_.size()) throw Error(ErrorKind::Shape, "welford update dimension mismatch");
  ++count_;
  const Vector delta = v - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta.cwiseProduct(v - mean_);
}

Vector WelfordVector::variance() const {
  if (count_ < 2) return Vector::Zero(mean_.size());
  return (m2_ / static_cast<double>(count_ - 1)).cwiseMax(0.0);
}

void RunningMoments::update(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

double RunningMoments::stddev() const { return std::sqrt(std::max(variance(), 0.0)); }

void MedianRing::push(double v) {
  if (values_.size() < capacity_) {
    values_.push_back(v);
  } else {
    values_[head_] = v;
    head_ = (head_ + 1) % capacity_;
  }
  cached_.reset();
}

double MedianRing::median() const {
  if (values_.empty()) throw Error(ErrorKind::ColdStart, "median of an empty buffer");
  if (cached_) return *cached_;
  std::vector<double> tmp = values_;
  const std::size_t n = tmp.size();
  const auto mid = tmp.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(tmp.begin(), mid, tmp.end());
  double m = *mid;
  if (n % 2 == 0) m = 0.5 * (m + *std::max_element(tmp.begin(), mid));
  cached_ = m;
  return m;
}

const Vector& layer_gradient(const LayerGradients& grads, std::size_t layer) {
  const std::size_t layers = grads.hidden_grads.size();
  if (layer == 0 || layer > layers) throw Error(ErrorKind::Shape, "layer index out of range");
  return layer == layers ? grads.output_grad : grads.hidden_grads[layer];
}

void GradientMomentum::update(const LayerGradients& grads) {
  const std::size_t layers = grads.hidden_grads.size();
  if (updates_ == 0) {
    flat_ = grads.param_grad_flat;
    layers_.clear();
    for (std::size_t l = 1; l <= layers; ++l) layers_.push_back(layer_gradient(grads, l));
  } else {
    flat_ = beta_ * flat_ + (1.0 - beta_) * grads.param_grad_flat;
    for (std::size_t l = 1; l <= layers; ++l) {
      layers_[l - 1] = beta_ * layers_[l - 1] + (1.0 - beta_) * layer_gradient(grads, l);
    }
  }
  flat_norm_ = flat_.norm();
  ++updates_;
}

void LossHistory::record(std::uint64_t digest, std::uint64_t model_version, double loss) {
  auto& ring = rings_[digest];
  if (!ring.empty() && ring.back().first >= model_version) {
    if (ring.back().first != model_version) return;  // out-of-order observation
    ring.back().second = loss;
  } else {
    ring.emplace_back(model_version, loss);
    while (ring.size() > window_) ring.pop_front();
  }
  if (auto v = variance(digest)) max_variance_ = std::max(max_variance_, *v);
}

std::optional<double> LossHistory::variance(std::uint64_t digest) const {
  auto it = rings_.find(digest);
  if (it == rings_.end() || it->second.size() < 2) return std::nullopt;
  const auto& ring = it->second;
  double mean = 0.0;
  for (const auto& [v, l] : ring) mean += l;
  mean /= static_cast<double>(ring.size());
  double var = 0.0;
  for (const auto& [v, l] : ring) var += (l - mean) * (l - mean);
  return var / static_cast<double>(ring.size());
}

std::size_t LossHistory::entries(std::uint64_t digest) const {
  auto it = rings_.find(digest);
  return it == rings_.end() ? 0 : it->second.size();
}

OnlineStats::OnlineStats(const std::vector<std::size_t>& layer_dims, OnlineStatsConfig config)
    : config_(config), momentum_(config.momentum_decay) {
  if (layer_dims.size() < 2) throw Error(ErrorKind::Config, "online stats need at least one layer");
  for (std::size_t l = 1; l < layer_dims.size(); ++l) {
    layers_.push_back(LayerStats{WelfordVector(layer_dims[l]), MedianRing(config_.norm_buffer)});
  }
}

void OnlineStats::update(const ForwardTrace& trace, const LayerGradients& grads) {
  if (trace.activations.size() != layers_.size() + 1 || grads.hidden_grads.size() != layers_.size()) {
    throw Error(ErrorKind::Shape, "trace/gradients do not match the tracked depth");
  }
  if (trace.model_version != grads.model_version) {
    throw Error(ErrorKind::Staleness, "trace and gradients come from different model versions");
  }
  bool finite = grads.param_grad_flat.allFinite() && grads.output_grad.allFinite();
  for (const auto& a : trace.activations) finite = finite && a.allFinite();
  for (const auto& g : grads.hidden_grads) finite = finite && g.allFinite();
  if (!finite) {
    ++warnings_;
    return;
  }
  for (std::size_t l = 1; l <= layers_.size(); ++l) {
    layers_[l - 1].activations.update(trace.activations[l]);
    layers_[l - 1].norms.push(trace.activations[l].norm());
  }
  momentum_.update(grads);
  ++observations_;
}

double OnlineStats::median_norm(std::size_t l) const { return layer(l).norms.median(); }

double OnlineStats::bandwidth(std::size_t l) const {
  const auto& w = layer(l).activations;
  if (w.count() < 2) return config_.default_bandwidth;
  // sqrt(mean per-coordinate variance * width) == sqrt(total variance).
  return std::max(std::sqrt(w.variance().sum()), config_.bandwidth_floor);
}

}  // namespace dvc

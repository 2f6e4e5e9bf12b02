#include "dvc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "dvc/digest.hpp"
#include "dvc/error.hpp"

namespace dvc {

Matrix SourcePool::features(std::span<const std::size_t> ids) const {
  Matrix out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = samples.at(ids[j]).x;
  return out;
}

std::vector<std::size_t> SourcePool::labels(std::span<const std::size_t> ids) const {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(samples.at(id).label);
  return out;
}

std::vector<std::size_t> SourcePool::all_ids() const {
  std::vector<std::size_t> ids(samples.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

std::size_t SourcePool::distinct_size() const {
  std::unordered_set<std::uint64_t> seen;
  for (const auto& s : samples) seen.insert(s.digest);
  return seen.size();
}

void finalize_pool(SourcePool& pool) {
  if (pool.num_classes < 2) throw Error(ErrorKind::Config, "need at least two classes");
  if (pool.sources.empty()) throw Error(ErrorKind::Config, "need at least one source");
  std::vector<bool> owned(pool.samples.size(), false);
  for (std::size_t s = 0; s < pool.sources.size(); ++s) {
    for (std::size_t id : pool.sources[s].ids) {
      if (id >= pool.samples.size() || owned[id]) {
        throw Error(ErrorKind::Input, "source ids must partition the sample list");
      }
      owned[id] = true;
      pool.samples[id].source = s;
    }
  }
  if (std::find(owned.begin(), owned.end(), false) != owned.end()) {
    throw Error(ErrorKind::Input, "every sample must belong to a source");
  }
  for (std::size_t i = 0; i < pool.samples.size(); ++i) {
    Sample& s = pool.samples[i];
    if (static_cast<std::size_t>(s.x.size()) != pool.dim) throw Error(ErrorKind::Shape, "feature dimension mismatch");
    if (s.label >= pool.num_classes || s.clean_label >= pool.num_classes) {
      throw Error(ErrorKind::Input, "label out of range");
    }
    s.id = i;
    s.digest = sample_digest(s.x, Target{s.label});
  }
  auto check_split = [&](const Matrix& x, const std::vector<std::size_t>& y) {
    if (x.cols() > 0 && static_cast<std::size_t>(x.rows()) != pool.dim) {
      throw Error(ErrorKind::Shape, "split feature dimension mismatch");
    }
    if (static_cast<std::size_t>(x.cols()) != y.size()) throw Error(ErrorKind::Shape, "split label count mismatch");
    for (std::size_t v : y) {
      if (v >= pool.num_classes) throw Error(ErrorKind::Input, "split label out of range");
    }
  };
  check_split(pool.val_x, pool.val_y);
  check_split(pool.test_x, pool.test_y);
}

std::uint64_t pool_digest(const SourcePool& pool) {
  Digest d;
  d.u64(pool.num_classes).u64(pool.dim).u64(pool.samples.size());
  for (const auto& s : pool.samples) d.vec(s.x).u64(s.label).u64(s.clean_label).u64(s.source);
  d.u64(pool.sources.size());
  for (const auto& src : pool.sources) {
    d.u64(src.ids.size());
    for (std::size_t id : src.ids) d.u64(id);
  }
  auto split = [&](const Matrix& x, const std::vector<std::size_t>& y) {
    d.u64(y.size());
    for (Eigen::Index j = 0; j < x.cols(); ++j) d.vec(Vector(x.col(j))).u64(y[static_cast<std::size_t>(j)]);
  };
  split(pool.val_x, pool.val_y);
  split(pool.test_x, pool.test_y);
  return d.value();
}

std::vector<CorruptionSpec> SynthSpec::default_sources() {
  std::vector<CorruptionSpec> out;
  for (double rate : {0.0, 0.05, 0.1, 0.2, 0.3, 0.4}) out.push_back({rate, 0.0, 1.0});
  return out;
}

void SynthSpec::validate() const {
  if (classes < 2) throw Error(ErrorKind::Config, "synthetic data needs at least two classes");
  if (dim == 0 || clusters_per_class == 0) throw Error(ErrorKind::Config, "dim and clusters must be positive");
  if (sources.empty()) throw Error(ErrorKind::Config, "synthetic data needs at least one source");
  if (train_size < sources.size()) throw Error(ErrorKind::Config, "fewer training samples than sources");
  if (!(separation > 0.0) || !(cluster_std > 0.0)) throw Error(ErrorKind::Config, "spreads must be positive");
  for (const auto& c : sources) {
    if (!(c.flip_rate >= 0.0 && c.flip_rate <= 1.0)) throw Error(ErrorKind::Config, "flip rate must lie in [0, 1]");
    if (!(c.feature_noise >= 0.0)) throw Error(ErrorKind::Config, "feature noise must be non-negative");
    if (!(c.duplication >= 1.0) || !std::isfinite(c.duplication)) {
      throw Error(ErrorKind::Config, "duplication factor must be >= 1");
    }
  }
}

SourcePool synthesize_pool(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(spec.dim);

  const std::size_t n_centres = spec.classes * spec.clusters_per_class;
  std::vector<Vector> centres(n_centres);
  for (auto& c : centres) {
    c.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) c[i] = spec.separation * normal(rng);
  }
  std::uniform_int_distribution<std::size_t> pick_centre(0, n_centres - 1);
  auto draw = [&](std::size_t& label) {
    const std::size_t c = pick_centre(rng);
    label = c % spec.classes;
    Vector x(d);
    for (Eigen::Index i = 0; i < d; ++i) x[i] = centres[c][i] + spec.cluster_std * normal(rng);
    return x;
  };

  SourcePool pool;
  pool.num_classes = spec.classes;
  pool.dim = spec.dim;
  auto make_split = [&](std::size_t n, Matrix& x, std::vector<std::size_t>& y) {
    x.resize(d, static_cast<Eigen::Index>(n));
    y.resize(n);
    for (std::size_t j = 0; j < n; ++j) x.col(static_cast<Eigen::Index>(j)) = draw(y[j]);
  };
  make_split(spec.val_size, pool.val_x, pool.val_y);
  make_split(spec.test_size, pool.test_x, pool.test_y);

  const std::size_t k = spec.sources.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> other(1, spec.classes - 1);
  for (std::size_t s = 0; s < k; ++s) {
    const CorruptionSpec& corr = spec.sources[s];
    // Even split, the first (train_size % k) sources take one extra sample.
    const std::size_t count = spec.train_size / k + (s < spec.train_size % k ? 1 : 0);
    Source src;
    src.name = "source_" + std::to_string(s);
    src.corruption = corr;
    const std::size_t first = pool.samples.size();
    for (std::size_t j = 0; j < count; ++j) {
      Sample smp;
      smp.x = draw(smp.clean_label);
      smp.label = smp.clean_label;
      if (corr.feature_noise > 0.0) {
        for (Eigen::Index i = 0; i < d; ++i) smp.x[i] += corr.feature_noise * normal(rng);
      }
      if (unit(rng) < corr.flip_rate) smp.label = (smp.clean_label + other(rng)) % spec.classes;
      src.ids.push_back(pool.samples.size());
      pool.samples.push_back(std::move(smp));
    }
    const auto extra = static_cast<std::size_t>(std::floor((corr.duplication - 1.0) * static_cast<double>(count) + 1e-9));
    std::uniform_int_distribution<std::size_t> pick(first, first + count - 1);
    for (std::size_t j = 0; j < extra; ++j) {
      Sample dup = pool.samples[pick(rng)];
      src.ids.push_back(pool.samples.size());
      pool.samples.push_back(std::move(dup));
    }
    pool.sources.push_back(std::move(src));
  }
  finalize_pool(pool);
  return pool;
}

}  // namespace dvc

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dvc/mlp.hpp"

namespace dvc {

struct Sample {
  std::size_t id = 0;  // index into SourcePool::samples
  Vector x;
  std::size_t label = 0;
  std::size_t clean_label = 0;  // ground truth, evaluation only
  std::size_t source = 0;
  std::uint64_t digest = 0;
};

struct CorruptionSpec {
  double flip_rate = 0.0;      // labels moved to a uniformly chosen other class
  double feature_noise = 0.0;  // isotropic Gaussian std added to features
  double duplication = 1.0;    // final size / original size, >= 1
};

struct Source {
  std::string name;
  CorruptionSpec corruption;
  std::vector<std::size_t> ids;
};

/// Training samples partitioned into sources, plus clean held-out splits.
struct SourcePool {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<Sample> samples;
  std::vector<Source> sources;
  Matrix val_x;
  std::vector<std::size_t> val_y;
  Matrix test_x;
  std::vector<std::size_t> test_y;

  std::size_t size() const noexcept { return samples.size(); }
  Matrix features(std::span<const std::size_t> ids) const;
  std::vector<std::size_t> labels(std::span<const std::size_t> ids) const;
  std::vector<std::size_t> all_ids() const;
  /// Number of distinct sample digests (duplicates count once).
  std::size_t distinct_size() const;
};

/// Assigns ids, source indices and digests; checks shapes and labels.
void finalize_pool(SourcePool& pool);

/// Order-sensitive digest of every split.
std::uint64_t pool_digest(const SourcePool& pool);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t dim = 32;
  std::size_t train_size = 12000;  // before duplication
  std::size_t val_size = 1000;
  std::size_t test_size = 4000;
  std::size_t clusters_per_class = 3;
  double separation = 1.0;    // std of cluster centres per coordinate
  double cluster_std = 1.0;   // within-cluster std per coordinate
  std::vector<CorruptionSpec> sources = default_sources();
  std::uint64_t seed = 0;

  static std::vector<CorruptionSpec> default_sources();
  void validate() const;
};

/// Gaussian-mixture classification data split evenly across sources, each
/// corrupted per its spec. Validation and test splits stay clean.
SourcePool synthesize_pool(const SynthSpec& spec);

}  // namespace dvc

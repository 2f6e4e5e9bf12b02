#pragma once

#include <cstddef>
#include <cstdint>
#include <list>
#include <memory>
#include <unordered_map>

#include "dvc/mlp.hpp"

namespace dvc {

struct CacheKey {
  std::uint64_t sample_digest = 0;
  std::uint64_t model_version = 0;

  bool operator==(const CacheKey&) const = default;
};

struct CacheKeyHash {
  std::size_t operator()(const CacheKey& k) const noexcept {
    return static_cast<std::size_t>(k.sample_digest ^ (k.model_version * 0x9E3779B97F4A7C15ULL));
  }
};

/// Forward trace and gradients of one sample under one model version.
struct SampleEvaluation {
  ForwardTrace trace;
  LayerGradients grads;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  double hit_rate = 0.0;
  std::size_t occupancy = 0;
};

/// LRU cache of per-sample gradients keyed by (sample digest, model version).
/// Any parameter update changes the version, so stale entries are never
/// returned; they simply age out.
class GradCache {
 public:
  explicit GradCache(std::size_t capacity = 4096);

  std::shared_ptr<const SampleEvaluation> get_or_compute(const MlpModel& model, const Vector& x,
                                                         const Target& y, const LossKind& loss);

  CacheStats stats() const;
  /// Drops every entry and zeroes the counters.
  void reset();

  std::size_t capacity() const noexcept { return capacity_; }
  bool contains(const CacheKey& key) const { return index_.contains(key); }

 private:
  struct Entry {
    CacheKey key;
    Vector x;
    Target y;
    std::shared_ptr<const SampleEvaluation> value;
  };
  using Recency = std::list<Entry>;

  std::size_t capacity_;
  Recency recency_;  // front = most recently used
  std::unordered_multimap<CacheKey, Recency::iterator, CacheKeyHash> index_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

}  // namespace dvc

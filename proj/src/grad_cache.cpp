#include "dvc/grad_cache.hpp"

#include "dvc/error.hpp"

namespace dvc {
namespace {

bool same_target(const Target& a, const Target& b) {
  if (a.index() != b.index()) return false;
  if (const auto* la = std::get_if<std::size_t>(&a)) return *la == std::get<std::size_t>(b);
  const Vector& va = std::get<Vector>(a);
  const Vector& vb = std::get<Vector>(b);
  return va.size() == vb.size() && va == vb;
}

}  // namespace

GradCache::GradCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw Error(ErrorKind::Config, "gradient cache capacity must be >= 1");
}

std::shared_ptr<const SampleEvaluation> GradCache::get_or_compute(const MlpModel& model,
                                                                  const Vector& x, const Target& y,
                                                                  const LossKind& loss) {
  const CacheKey key{sample_digest(x, y), model.version()};
  auto [first, last] = index_.equal_range(key);
  for (auto it = first; it != last; ++it) {
    const Entry& e = *it->second;
    // Digest collisions are resolved by comparing the full sample.
    if (e.x.size() == x.size() && e.x == x && same_target(e.y, y)) {
      recency_.splice(recency_.begin(), recency_, it->second);
      ++hits_;
      return e.value;
    }
  }

  // Computation errors propagate before anything is inserted.
  auto eval = std::make_shared<SampleEvaluation>();
  eval->trace = forward(model, x, y, loss);
  eval->grads = backward(model, eval->trace, y, loss);
  ++misses_;

  if (recency_.size() >= capacity_) {
    const Entry& victim = recency_.back();
    auto [vf, vl] = index_.equal_range(victim.key);
    for (auto it = vf; it != vl; ++it) {
      if (it->second == std::prev(recency_.end())) {
        index_.erase(it);
        break;
      }
    }
    recency_.pop_back();
  }
  recency_.push_front(Entry{key, x, y, eval});
  index_.emplace(key, recency_.begin());
  return eval;
}

CacheStats GradCache::stats() const {
  CacheStats s;
  s.hits = hits_;
  s.misses = misses_;
  const std::uint64_t total = hits_ + misses_;
  s.hit_rate = total == 0 ? 0.0 : static_cast<double>(hits_) / static_cast<double>(total);
  s.occupancy = recency_.size();
  return s;
}

void GradCache::reset() {
  recency_.clear();
  index_.clear();
  hits_ = 0;
  misses_ = 0;
}

}  // namespace dvc

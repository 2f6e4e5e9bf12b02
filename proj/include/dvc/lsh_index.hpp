#pragma once

#include <cstddef>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dvc/mlp.hpp"

namespace dvc {

struct LshParams {
  std::size_t dim = 0;
  std::size_t bits = 12;    // projections per table (k)
  std::size_t tables = 16;  // h
  std::uint64_t seed = 0;
  std::size_t bucket_cap = 0;  // newest entries read per bucket on a query; 0 reads all

  /// Picks k = ceil(log2 n) - 2 so that the expected bucket occupancy stays
  /// in [2, 4) as the index grows; the table count is left unchanged.
  static LshParams scaled_for(std::size_t expected_size, std::size_t dim, std::size_t tables = 16,
                              std::uint64_t seed = 0);
};

struct Neighbor {
  std::size_t id = 0;
  double similarity = 0.0;
};

/// Random-hyperplane (sign) LSH over fixed-dimension vectors. Candidates are
/// the union of the query's buckets across tables, re-ranked exactly.
class LshIndex {
 public:
  static constexpr double kDensityFloor = 1e-12;

  explicit LshIndex(LshParams params);

  void insert(std::size_t id, const Vector& v);

  /// Up to `k` candidates by descending cosine similarity (ties by id).
  std::vector<Neighbor> query(const Vector& q, std::size_t k) const;

  /// (1 / total_seen) * sum of exp(-|q - v|^2 / (2 sigma^2)) over the `k`
  /// candidates with the largest kernel value, floored at kDensityFloor.
  double kernel_density(const Vector& q, double sigma, std::size_t k, std::size_t total_seen) const;

  /// Ids sharing at least one bucket with `q`, ascending.
  std::vector<std::size_t> candidates(const Vector& q) const;

  std::uint64_t code(std::size_t table, const Vector& v) const;
  std::size_t bucket_size(std::size_t table, std::uint64_t code) const;
  std::size_t occupied_buckets(std::size_t table) const { return tables_.at(table).size(); }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  bool contains(std::size_t id) const { return slot_of_.contains(id); }
  const LshParams& params() const noexcept { return params_; }

 private:
  std::vector<std::uint64_t> codes(const Vector& v) const;
  std::vector<std::uint32_t> candidate_slots(const Vector& q) const;
  void check_dim(const Vector& v) const;

  LshParams params_;
  Matrix projections_;  // (tables * bits) x dim, unit-norm rows
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>> tables_;
  std::vector<std::size_t> ids_;
  std::vector<Vector> vectors_;
  std::vector<double> norms_;
  std::unordered_map<std::size_t, std::uint32_t> slot_of_;
};

}  // namespace dvc

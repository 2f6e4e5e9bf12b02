#include "dvc/lsh_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "dvc/error.hpp"

namespace dvc {

LshParams LshParams::scaled_for(std::size_t expected_size, std::size_t dim, std::size_t tables,
                                std::uint64_t seed) {
  const std::size_t n = std::max<std::size_t>(expected_size, 2);
  const auto log2n = static_cast<std::size_t>(std::bit_width(n - 1));  // ceil(log2 n)
  const std::size_t bits = std::clamp<std::size_t>(log2n > 2 ? log2n - 2 : 1, 1, 63);
  return LshParams{dim, bits, tables, seed};
}

LshIndex::LshIndex(LshParams params) : params_(params) {
  if (params_.dim == 0) throw Error(ErrorKind::Config, "LSH dimension must be positive");
  if (params_.bits == 0 || params_.bits > 63) throw Error(ErrorKind::Config, "LSH bits must be in [1, 63]");
  if (params_.tables == 0) throw Error(ErrorKind::Config, "LSH needs at least one table");
  std::mt19937_64 rng(params_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(params_.tables * params_.bits);
  projections_.resize(rows, static_cast<Eigen::Index>(params_.dim));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < projections_.cols(); ++c) projections_(r, c) = normal(rng);
    projections_.row(r).normalize();
  }
  tables_.resize(params_.tables);
}

void LshIndex::check_dim(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != params_.dim) {
    throw Error(ErrorKind::Shape, "LSH vector dimension " + std::to_string(v.size()) +
                                      " != index dimension " + std::to_string(params_.dim));
  }
}

std::vector<std::uint64_t> LshIndex::codes(const Vector& v) const {
  const Vector projected = projections_ * v;
  std::vector<std::uint64_t> out(params_.tables, 0);
  for (std::size_t t = 0; t < params_.tables; ++t) {
    std::uint64_t c = 0;
    for (std::size_t b = 0; b < params_.bits; ++b) {
      if (projected[static_cast<Eigen::Index>(t * params_.bits + b)] >= 0.0) c |= (1ULL << b);
    }
    out[t] = c;
  }
  return out;
}

std::uint64_t LshIndex::code(std::size_t table, const Vector& v) const {
  check_dim(v);
  return codes(v).at(table);
}

std::size_t LshIndex::bucket_size(std::size_t table, std::uint64_t code) const {
  const auto& t = tables_.at(table);
  auto it = t.find(code);
  return it == t.end() ? 0 : it->second.size();
}

void LshIndex::insert(std::size_t id, const Vector& v) {
  check_dim(v);
  if (!v.allFinite()) throw Error(ErrorKind::Input, "non-finite vector");
  if (slot_of_.contains(id)) {
    throw Error(ErrorKind::Duplicate, "id " + std::to_string(id) + " already indexed");
  }
  const auto slot = static_cast<std::uint32_t>(ids_.size());
  const auto c = codes(v);
  for (std::size_t t = 0; t < params_.tables; ++t) tables_[t][c[t]].push_back(slot);
  ids_.push_back(id);
  vectors_.push_back(v);
  norms_.push_back(v.norm());
  slot_of_.emplace(id, slot);
}

std::vector<std::uint32_t> LshIndex::candidate_slots(const Vector& q) const {
  std::vector<std::uint32_t> slots;
  const auto c = codes(q);
  for (std::size_t t = 0; t < params_.tables; ++t) {
    auto it = tables_[t].find(c[t]);
    if (it == tables_[t].end()) continue;
    const auto& bucket = it->second;
    const std::size_t take = params_.bucket_cap > 0 ? std::min(params_.bucket_cap, bucket.size()) : bucket.size();
    slots.insert(slots.end(), bucket.end() - static_cast<std::ptrdiff_t>(take), bucket.end());
  }
  std::sort(slots.begin(), slots.end());
  slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
  return slots;
}

std::vector<std::size_t> LshIndex::candidates(const Vector& q) const {
  check_dim(q);
  std::vector<std::size_t> out;
  for (std::uint32_t s : candidate_slots(q)) out.push_back(ids_[s]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Neighbor> LshIndex::query(const Vector& q, std::size_t k) const {
  check_dim(q);
  const double qn = q.norm();
  if (!(qn > 0.0)) throw Error(ErrorKind::DegenerateVector, "zero-norm LSH query");
  std::vector<Neighbor> result;
  for (std::uint32_t s : candidate_slots(q)) {
    double sim = norms_[s] > 0.0 ? vectors_[s].dot(q) / (norms_[s] * qn) : 0.0;
    result.push_back({ids_[s], std::clamp(sim, -1.0, 1.0)});
  }
  auto better = [](const Neighbor& a, const Neighbor& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  };
  const std::size_t keep = std::min(k, result.size());
  std::partial_sort(result.begin(), result.begin() + static_cast<std::ptrdiff_t>(keep), result.end(),
                    better);
  result.resize(keep);
  return result;
}

double LshIndex::kernel_density(const Vector& q, double sigma, std::size_t k,
                                std::size_t total_seen) const {
  check_dim(q);
  if (!(sigma > 0.0)) throw Error(ErrorKind::Config, "kernel bandwidth must be positive");
  if (ids_.empty() || k == 0) return kDensityFloor;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> kernels;
  for (std::uint32_t s : candidate_slots(q)) {
    kernels.push_back(std::exp(-(vectors_[s] - q).squaredNorm() * inv));
  }
  const std::size_t keep = std::min(k, kernels.size());
  std::partial_sort(kernels.begin(), kernels.begin() + static_cast<std::ptrdiff_t>(keep),
                    kernels.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) sum += kernels[i];
  const double denom = static_cast<double>(std::max(total_seen, ids_.size()));
  return std::clamp(sum / denom, kDensityFloor, 1.0);
}

}  // namespace dvc

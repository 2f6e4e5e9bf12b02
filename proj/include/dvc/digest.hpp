#pragma once

#include <cstdint>
#include <span>

#include <Eigen/Core>

namespace dvc {

/// Incremental FNV-1a (64-bit) over a canonical little-endian byte stream.
class Digest {
 public:
  Digest& bytes(std::span<const unsigned char> data);
  Digest& u64(std::uint64_t value);
  Digest& f64(double value);
  Digest& vec(const Eigen::VectorXd& v);

  std::uint64_t value() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 14695981039346656037ULL;
};

std::uint64_t digest_vector(const Eigen::VectorXd& v);

}  // namespace dvc

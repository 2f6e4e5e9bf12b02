#include "dvc/digest.hpp"

#include <bit>

namespace dvc {

Digest& Digest::bytes(std::span<const unsigned char> data) {
  for (unsigned char b : data) {
    state_ ^= b;
    state_ *= 1099511628211ULL;
  }
  return *this;
}

Digest& Digest::u64(std::uint64_t value) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  return bytes(buf);
}

Digest& Digest::f64(double value) {
  // Fold -0.0 onto +0.0 so numerically equal inputs hash equally.
  if (value == 0.0) value = 0.0;
  return u64(std::bit_cast<std::uint64_t>(value));
}

Digest& Digest::vec(const Eigen::VectorXd& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  return *this;
}

std::uint64_t digest_vector(const Eigen::VectorXd& v) { return Digest{}.vec(v).value(); }

}  // namespace dvc

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dvc {

/// Machine-readable error classes. The CLI prints `to_string(kind)` and maps
/// each class to a distinct exit code.
enum class ErrorKind {
  Shape,
  Input,
  Staleness,
  Numerics,
  UnsupportedLoss,
  ColdStart,
  Duplicate,
  DegenerateVector,
  Config,
  Schema,
  Unsupported,
  Io,
};

std::string_view to_string(ErrorKind kind);
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dvc

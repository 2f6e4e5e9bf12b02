#include "dvc/error.hpp"

namespace dvc {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape_error";
    case ErrorKind::Input: return "input_error";
    case ErrorKind::Staleness: return "staleness_error";
    case ErrorKind::Numerics: return "numerics_error";
    case ErrorKind::UnsupportedLoss: return "unsupported_loss";
    case ErrorKind::ColdStart: return "cold_start";
    case ErrorKind::Duplicate: return "duplicate_error";
    case ErrorKind::DegenerateVector: return "degenerate_vector";
    case ErrorKind::Config: return "config_error";
    case ErrorKind::Schema: return "schema_error";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Io: return "io_error";
  }
  return "unknown_error";
}

int exit_code(ErrorKind kind) {
  // 1 is reserved for unclassified failures.
  return 10 + static_cast<int>(kind);
}

}  // namespace dvc

#include "cf/error.hpp"

namespace cf {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::ShapeInconsistency: return "shape inconsistency";
    case ErrorCode::ChecksumMismatch: return "checksum mismatch";
    case ErrorCode::CyclicGraph: return "cyclic graph";
    case ErrorCode::UnknownNode: return "unknown node";
    case ErrorCode::UnsupportedTopology: return "unsupported topology";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::PlanRejected: return "plan rejected";
  }
  return "error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace cf

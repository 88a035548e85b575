#pragma once

#include <stdexcept>
#include <string>

namespace cf {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  ShapeInconsistency,
  ChecksumMismatch,
  CyclicGraph,
  UnknownNode,
  UnsupportedTopology,
  Format,
  Io,
  PlanRejected,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure raised by the toolkit carries a machine-checkable code so
// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cf

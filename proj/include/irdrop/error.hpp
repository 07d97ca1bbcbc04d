#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace irdrop {

enum class ErrorKind {
  kInvalidInput,
  kInvalidParameter,
  kShape,
  kFormat,
  kUnsupported,
  kLength,
  kInvalidProblem,
  kConvergence,
  kInvalidState,
  kCheckpoint,
  kIo,
  kTraining,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid-input";
    case ErrorKind::kInvalidParameter: return "invalid-parameter";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kLength: return "length";
    case ErrorKind::kInvalidProblem: return "invalid-problem";
    case ErrorKind::kConvergence: return "convergence";
    case ErrorKind::kInvalidState: return "invalid-state";
    case ErrorKind::kCheckpoint: return "checkpoint";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kTraining: return "training";
  }
  return "unknown";
}

// Every failure raised by the library carries a kind so the CLI and the
// HTTP layer can map it to exit codes and status codes without string
// matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double residual, int iterations)
      : Error(ErrorKind::kConvergence, message),
        residual_(residual),
        iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const char* message) {
  if (!condition) throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace detail
}  // namespace irdrop

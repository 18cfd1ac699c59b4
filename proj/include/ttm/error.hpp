#pragma once

#include <stdexcept>
#include <string>

namespace ttm {

// Error categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  kValidation,  // malformed input, invariant violation
  kDivergence,  // non-finite loss during finetuning
  kIo,          // unreadable file, malformed encoding
  kCapacity,    // instance too large for the requested solver
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kCapacity:
      return 1;
    case ErrorKind::kDivergence:
      return 2;
    case ErrorKind::kIo:
      return 3;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace ttm

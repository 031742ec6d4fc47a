#pragma once

#include <stdexcept>
#include <string>

namespace qtraj {

enum class ErrorKind {
  invalid_dimension,
  invalid_level,
  signature,
  configuration,
  numerical,
  degenerate,
  io,
  internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Process exit code for an error category: 2 configuration, 3 numerical,
/// 4 I/O.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_dimension:
    case ErrorKind::invalid_level:
    case ErrorKind::signature:
    case ErrorKind::configuration:
      return 2;
    case ErrorKind::numerical:
    case ErrorKind::degenerate:
    case ErrorKind::internal:
      return 3;
    case ErrorKind::io:
      return 4;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace qtraj

#pragma once

#include <stdexcept>
#include <string>

namespace cellsteer {

/// Error categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  non_finite,
  io,
  corrupt_file,
  not_found,
  conflict,
};

inline const char *to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::invalid_argument: return "invalid_argument";
  case ErrorKind::shape_mismatch: return "shape_mismatch";
  case ErrorKind::non_finite: return "non_finite";
  case ErrorKind::io: return "io";
  case ErrorKind::corrupt_file: return "corrupt_file";
  case ErrorKind::not_found: return "not_found";
  case ErrorKind::conflict: return "conflict";
  }
  return "unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &message, std::string field = {})
      : std::runtime_error(message), kind_(kind), field_(std::move(field)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Name of the offending input, empty when not attributable.
  const std::string &field() const noexcept { return field_; }

private:
  ErrorKind kind_;
  std::string field_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &message,
                              std::string field = {}) {
  throw Error(kind, message, std::move(field));
}

} // namespace cellsteer

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace featurescope {

enum class ErrorKind {
  Validation,
  Io,
  Format,
  Corruption,
  Alignment,
  Shape,
  Argument,
  Domain,
  Manifest,
  Degenerate,
  Budget,
  Oracle,
  Internal,
};

std::string_view to_string(ErrorKind kind);

// Input problems the caller can fix (exit code 1 in the CLI). Everything
// else is a computation failure (exit code 2).
bool is_input_error(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace featurescope

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rulespa {

enum class ErrorCode {
  InvalidArgument,
  Parse,
  Validation,
  Degenerate,
  Io,
  OutOfRange,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type thrown by every module. The code is stable and is what the
/// CLI prints in its machine-readable error line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rulespa

#pragma once

#include <stdexcept>
#include <string>

namespace gridtrade {

/// Base of every error this library throws. `code()` is a stable
/// identifier (e.g. "InsufficientBalance") that the HTTP API and CLI
/// report verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace gridtrade

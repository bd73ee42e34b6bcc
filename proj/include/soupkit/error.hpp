#pragma once

#include <stdexcept>
#include <string>

namespace soupkit {

/// Invalid input data, configuration, or file contents. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}

  [[nodiscard]] long step() const noexcept { return step_; }

 private:
  long step_;
};

template <class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  std::string msg;
  ((msg += parts), ...);
  throw ValidationError(msg);
}

}  // namespace soupkit

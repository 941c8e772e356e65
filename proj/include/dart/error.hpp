#pragma once

#include <stdexcept>
#include <string>

namespace dart {

// Invalid arguments raise std::invalid_argument. These two cover the
// environment-facing failures the CLI maps onto exit codes.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Prefixes a pipeline stage name onto an error raised inside it.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dart

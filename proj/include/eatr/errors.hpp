#pragma once

#include <stdexcept>
#include <string>

namespace eatr {

// Bad configuration, bad flags, schema violations. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed on-disk artifacts (bad magic, truncated payload, bad JSON).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// A referenced file (checkpoint, feature file, dataset) does not exist.
// CLI exit code 3.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& what)
      : std::runtime_error(what) {}
};

// Domain-invariant violations (invalid spans, degenerate features, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what)
      : std::runtime_error(what) {}
};

// Non-finite loss during training. CLI exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace eatr

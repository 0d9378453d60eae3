#pragma once

#include <stdexcept>
#include <string>

namespace polypdam {

/// Tensor shapes that do not fit an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A gradient was requested through an operation that cannot provide one.
class GradientError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure of an external depth command; carries its captured output.
class ExternalToolError : public std::runtime_error {
 public:
  ExternalToolError(const std::string& what, std::string diagnostics)
      : std::runtime_error(what + (diagnostics.empty() ? "" : "\n" + diagnostics)),
        diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

/// A metric has no defined value for the given input (e.g. weighted
/// F-measure on an empty ground truth).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace polypdam

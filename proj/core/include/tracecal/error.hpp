#pragma once

#include <stdexcept>
#include <string>

namespace tracecal {

// Root of every error the library throws. `kind()` is a stable machine-readable
// tag used by the CLI when it reports failures on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& m) : Error("invalid_input", m) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& m) : Error("parse_error", m) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error("schema_error", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& m) : Error("undefined_metric", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

class BudgetExceeded : public ConfigError {
 public:
  explicit BudgetExceeded(const std::string& m) : ConfigError(m) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& m) : Error("training_error", m) {}
};

class ScoringError : public Error {
 public:
  explicit ScoringError(const std::string& m) : Error("scoring_error", m) {}
};

class GraphError : public Error {
 public:
  explicit GraphError(const std::string& m) : Error("graph_error", m) {}
};

class GenerationFailure : public Error {
 public:
  GenerationFailure(const std::string& m, bool retryable)
      : Error("generation_failure", m), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

}  // namespace tracecal

#pragma once

#include <stdexcept>
#include <string>

namespace pehcm {

/// Base of every error this library throws. `kind()` is a stable
/// machine-readable tag used by the CLI's JSON error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct InvalidInput : Error {
  explicit InvalidInput(const std::string& what) : Error("invalid-input", what) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

struct DegenerateHyperplane : Error {
  explicit DegenerateHyperplane(const std::string& what)
      : Error("degenerate-hyperplane", what) {}
};

struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error("parse", what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct EpisodeInfeasible : Error {
  explicit EpisodeInfeasible(const std::string& what) : Error("episode-infeasible", what) {}
};

struct CheckpointError : Error {
  explicit CheckpointError(const std::string& what) : Error("checkpoint", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(const std::string& what) : Error("non-finite-loss", what) {}
};

}  // namespace pehcm

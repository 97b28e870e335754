#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dprm {

/// A computation would exceed its memory or work budget.
class ResourceError : public std::runtime_error {
 public:
  ResourceError(const std::string& what, double required, double budget)
      : std::runtime_error(what + " (required " + std::to_string(required) + ", budget " +
                           std::to_string(budget) + ")"),
        required_(required),
        budget_(budget) {}

  double required() const { return required_; }
  double budget() const { return budget_; }

 private:
  double required_;
  double budget_;
};

/// The system size asked for by an asymptotic scale choice is beyond the cap.
class UnreachableScaleError : public std::runtime_error {
 public:
  UnreachableScaleError(const std::string& what, double required, double cap)
      : std::runtime_error(what + ": theorem scale unreachable, required N = " +
                           std::to_string(required) + " exceeds cap " + std::to_string(cap)),
        required_(required),
        cap_(cap) {}

  double required() const { return required_; }
  double cap() const { return cap_; }

 private:
  double required_;
  double cap_;
};

/// Invalid experiment configuration or plan geometry.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A checkpoint that cannot be trusted for resumption.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dprm

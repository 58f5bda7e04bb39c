#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advpol {

/// Invalid configuration or mismatched dimensions/roles. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value appeared in a computation. The CLI maps it to exit code 3.
class NumericalFault : public std::runtime_error {
 public:
  NumericalFault(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace advpol

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nhmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Invalid configuration or violated precondition. The message names the
// offending field or argument.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite state inside the decoder or an integrator trajectory.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// |F x| has no derivative at a zero-modulus Fourier bin.
class NondifferentiablePointError : public std::runtime_error {
 public:
  NondifferentiablePointError(const std::string& msg, int bin)
      : std::runtime_error(msg + " (bin " + std::to_string(bin) + ")"),
        bin_(bin) {}
  int bin() const noexcept { return bin_; }

 private:
  int bin_;
};

// Jeffreys potential evaluated at an exactly-zero residual.
class DegenerateFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// HMC proposal loop exhausted its retry bound. Carries the step sizes of
// the rejected proposals so a pathological configuration can be diagnosed.
class ChainAbortError : public std::runtime_error {
 public:
  ChainAbortError(const std::string& msg, std::vector<double> retry_deltas)
      : std::runtime_error(msg), retry_deltas_(std::move(retry_deltas)) {}
  const std::vector<double>& retry_deltas() const noexcept {
    return retry_deltas_;
  }

 private:
  std::vector<double> retry_deltas_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace nhmc

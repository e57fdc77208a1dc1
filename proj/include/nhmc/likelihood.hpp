#pragma once

#include <cmath>
#include <optional>

#include "nhmc/core.hpp"
#include "nhmc/decoder.hpp"
#include "nhmc/operators.hpp"

namespace nhmc {

enum class PotentialMode { known_sigma, jeffreys };

// One combined evaluation of U and grad U. Carries the decoded signal and
// residual so the sampler can reuse them for diagnostics, and the
// likelihood prefactor so a sigma change can reweight the evaluation
// without another decode.
struct PotentialEval {
  double value = 0.0;
  Vector grad;
  Vector x0;
  Vector residual;
  double lik_prefactor = 0.0;
};

// Potential energy U(x_T) = -log p(x_T | y) up to an additive constant.
//   known_sigma: 1/2 ||x_T||^2 + ||y - A(D(x_T))||^2 / (2 sigma^2)
//   jeffreys:    1/2 ||x_T||^2 + (m/2) log ||y - A(D(x_T))||^2
// Both potentials are defined up to additive constants; values are
// comparable only within one mode.
class Potential {
 public:
  static Potential known_sigma(ForwardProblem problem, DdimDecoder decoder,
                               double sigma_y) {
    require(sigma_y > 0.0, "known-sigma potential needs sigma_y > 0");
    return Potential(PotentialMode::known_sigma, std::move(problem),
                     std::move(decoder), sigma_y);
  }

  static Potential jeffreys(ForwardProblem problem, DdimDecoder decoder) {
    return Potential(PotentialMode::jeffreys, std::move(problem),
                     std::move(decoder), 0.0);
  }

  PotentialMode mode() const { return mode_; }
  double sigma() const { return sigma_; }
  int dim() const { return decoder_.dim(); }
  const ForwardProblem& problem() const { return problem_; }
  const DdimDecoder& decoder() const { return decoder_; }

  struct Value {
    double value = 0.0;
    Vector x0;
    Vector residual;
  };

  double likelihood_value(const Vector& residual) const {
    const double sq = residual.squaredNorm();
    if (mode_ == PotentialMode::known_sigma)
      return 0.5 * sq / (sigma_ * sigma_);
    if (sq == 0.0)
      throw DegenerateFitError(
          "jeffreys potential diverges at an exactly-zero residual");
    return 0.5 * problem_.op.output_dim() * std::log(sq);
  }

  double likelihood_prefactor(const Vector& residual) const {
    if (mode_ == PotentialMode::known_sigma) return 1.0 / (sigma_ * sigma_);
    const double sq = residual.squaredNorm();
    if (sq == 0.0)
      throw DegenerateFitError(
          "jeffreys potential diverges at an exactly-zero residual");
    return problem_.op.output_dim() / sq;
  }

  // One decode; returns U(x_T) plus the decoded signal and residual.
  Value potential(const Vector& x_T) const {
    Value v;
    v.x0 = decoder_.decode(x_T);
    v.residual = problem_.y - problem_.op.apply(v.x0);
    v.value = 0.5 * x_T.squaredNorm() + likelihood_value(v.residual);
    return v;
  }

  // grad U = x_T + prefactor * D'(x_T)^T A'(x0)^T (-(y - A(x0))), with
  // prefactor 1/sigma^2 (known sigma) or m/||r||^2 (Jeffreys).
  Vector grad_potential(const Vector& x_T) const { return eval(x_T).grad; }

  // One decode plus one VJP sweep over the shared tape.
  PotentialEval eval(const Vector& x_T) const {
    PotentialEval e;
    DdimDecoder::Tape tape;
    e.x0 = decoder_.decode(x_T, &tape);
    e.residual = problem_.y - problem_.op.apply(e.x0);
    e.value = 0.5 * x_T.squaredNorm() + likelihood_value(e.residual);
    e.lik_prefactor = likelihood_prefactor(e.residual);
    const Vector cot = problem_.op.vjp(e.x0, -e.residual);
    e.grad = x_T + e.lik_prefactor * decoder_.vjp_from_tape(tape, cot);
    return e;
  }

  // Rebuild value/grad of an evaluation made under another sigma regime,
  // reusing its decode. Valid because the decoded signal, residual and the
  // VJP chain do not depend on sigma.
  PotentialEval reweight(const Vector& x_T, const PotentialEval& cached) const {
    PotentialEval e = cached;
    e.value = 0.5 * x_T.squaredNorm() + likelihood_value(e.residual);
    const double pref = likelihood_prefactor(e.residual);
    e.grad = x_T + (pref / cached.lik_prefactor) * (cached.grad - x_T);
    e.lik_prefactor = pref;
    return e;
  }

  double sigma_hat_of(const Vector& residual) const {
    return residual.norm() / std::sqrt(problem_.op.output_dim());
  }

 private:
  Potential(PotentialMode mode, ForwardProblem problem, DdimDecoder decoder,
            double sigma_y)
      : mode_(mode),
        sigma_(sigma_y),
        problem_(std::move(problem)),
        decoder_(std::move(decoder)) {
    require(decoder_.dim() == problem_.op.input_dim(),
            "decoder and operator dimensions disagree");
    require(static_cast<int>(problem_.y.size()) == problem_.op.output_dim(),
            "measurement length does not match the operator");
  }

  PotentialMode mode_;
  double sigma_;
  ForwardProblem problem_;
  DdimDecoder decoder_;
};

}  // namespace nhmc

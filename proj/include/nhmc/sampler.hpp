#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/likelihood.hpp"
#include "nhmc/rng.hpp"
#include "nhmc/schedules.hpp"

namespace nhmc {

struct HmcConfig {
  int iterations = 100;      // K
  int leapfrog_steps = 20;   // L
  double step_size = 0.05;   // delta_0
  double decay = 0.95;       // gamma
  int max_retries = 50;
  int burn_in = 0;           // extra post-warmup iterations to discard
  SigmaAnnealSchedule sigma_schedule{};
  PotentialMode mode = PotentialMode::jeffreys;
  std::optional<double> sigma_target{};

  void validate() const {
    require(iterations >= 0, "iterations must be nonnegative");
    require(leapfrog_steps >= 1, "leapfrog_steps must be >= 1");
    require(step_size > 0.0, "step_size must be positive");
    require(decay > 0.0 && decay < 1.0, "decay must lie in (0, 1)");
    require(max_retries >= 1, "max_retries must be >= 1");
    require(burn_in >= 0, "burn_in must be nonnegative");
    if (mode == PotentialMode::known_sigma)
      require(sigma_target.has_value(),
              "known-sigma mode needs a sigma_target");
  }

  int warmup() const { return sigma_schedule.warmup_iters + burn_in; }
};

struct IterationRecord {
  int k = 0;
  bool accepted = false;  // accepted on the first proposal, no retries
  int retries = 0;
  double delta = 0.0;
  double dH = 0.0;
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
  double potential = 0.0;
  double sigma_used = std::numeric_limits<double>::quiet_NaN();
  int grad_evals = 0;
};

struct ChainState {
  Vector x;
  double delta = 0.0;
  int k = 0;
  PotentialEval cached;
};

struct ChainOutput {
  std::vector<Vector> samples_xT;
  std::vector<Vector> samples_x0;
  std::vector<IterationRecord> records;
  Vector x_init;
  double initial_potential = 0.0;
  double initial_sigma_hat = std::numeric_limits<double>::quiet_NaN();
  int warmup = 0;

  // proposal-level acceptance: iterations / (iterations + retries)
  double acceptance_rate() const {
    if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
    double retries = 0.0;
    for (const auto& r : records) retries += r.retries;
    return records.size() / (records.size() + retries);
  }
};

template <typename Target>
struct LeapfrogResult {
  Vector x;
  Vector p;
  PotentialEval final_eval;
  int grad_evals = 0;
};

// L half-kick/drift/half-kick steps with unit mass matrix. Throws
// DivergenceError on a non-finite trajectory. When the caller already
// holds the evaluation at the start point it can be passed to avoid one
// decode.
template <typename Target>
LeapfrogResult<Target> leapfrog(const Target& target, Vector x, Vector p,
                                double delta, int steps,
                                const PotentialEval* start = nullptr) {
  require(delta > 0.0, "leapfrog step size must be positive");
  require(steps >= 1, "leapfrog needs at least one step");
  int evals = 0;
  PotentialEval e;
  if (start) {
    e = *start;
  } else {
    e = target.eval(x);
    ++evals;
  }
  p -= 0.5 * delta * e.grad;
  for (int l = 0; l < steps; ++l) {
    x += delta * p;
    if (!x.allFinite())
      throw DivergenceError("leapfrog trajectory left the finite domain");
    e = target.eval(x);
    ++evals;
    if (!std::isfinite(e.value) || !e.grad.allFinite())
      throw DivergenceError("leapfrog hit a non-finite potential");
    p -= (l + 1 == steps ? 0.5 : 1.0) * delta * e.grad;
  }
  if (!p.allFinite())
    throw DivergenceError("leapfrog momentum is not finite");
  return LeapfrogResult<Target>{std::move(x), std::move(p), std::move(e),
                                evals};
}

namespace detail {

template <typename Target>
double sigma_hat_or_nan(const Target&, const PotentialEval& e) {
  if (e.residual.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  return e.residual.norm() / std::sqrt(static_cast<double>(e.residual.size()));
}

}  // namespace detail

// One HMC iteration following the repeat-until-accepted structure: fresh
// momentum each attempt, step size multiplied by `decay` after every
// rejection (divergent trajectories count as rejections). Exceeding
// max_retries aborts the chain with the retry trace.
template <typename Target>
IterationRecord hmc_iteration(ChainState& state, const Target& pot,
                              const HmcConfig& cfg, RngStream& rng) {
  const int n = static_cast<int>(state.x.size());
  std::vector<double> retry_deltas;
  for (int attempt = 0;; ++attempt) {
    if (attempt > cfg.max_retries)
      throw ChainAbortError(
          "HMC iteration exceeded max_retries=" +
              std::to_string(cfg.max_retries) +
              "; the step size or schedule is pathological",
          retry_deltas);
    const Vector p = rng.normal_vector(n);
    const double H0 = state.cached.value + 0.5 * p.squaredNorm();
    double H1 = std::numeric_limits<double>::infinity();
    LeapfrogResult<Target> traj;
    bool diverged = false;
    try {
      traj = leapfrog(pot, state.x, p, state.delta, cfg.leapfrog_steps,
                      &state.cached);
      H1 = traj.final_eval.value + 0.5 * traj.p.squaredNorm();
    } catch (const DivergenceError&) {
      diverged = true;
    }
    const double u = rng.uniform();
    if (!diverged && std::isfinite(H1) && u < std::exp(H0 - H1)) {
      state.x = std::move(traj.x);
      state.cached = std::move(traj.final_eval);
      IterationRecord rec;
      rec.k = state.k;
      rec.accepted = attempt == 0;
      rec.retries = attempt;
      rec.delta = state.delta;
      rec.dH = H1 - H0;
      rec.sigma_hat = detail::sigma_hat_or_nan(pot, state.cached);
      rec.potential = state.cached.value;
      rec.grad_evals = traj.grad_evals;
      return rec;
    }
    retry_deltas.push_back(state.delta);
    state.delta *= cfg.decay;
  }
}

using PotentialFactory = std::function<Potential(int k)>;

// Potential per iteration k: Gaussian likelihood with the annealed sigma
// during warmup, then the fixed target sigma (N-HMC) or the Jeffreys
// marginalized likelihood (NA-NHMC).
inline PotentialFactory make_annealed_potential_factory(
    const ForwardProblem& problem, const DdimDecoder& decoder,
    const HmcConfig& cfg) {
  return [problem, decoder, cfg](int k) {
    const auto sigma =
        sigma_anneal_value(cfg.sigma_schedule, k, cfg.sigma_target);
    if (sigma) return Potential::known_sigma(problem, decoder, *sigma);
    if (cfg.mode == PotentialMode::jeffreys)
      return Potential::jeffreys(problem, decoder);
    throw ConfigError(
        "known-sigma sampler reached the adaptive regime without a "
        "sigma_target");
  };
}

// Full N-HMC / NA-NHMC loop. x_T is initialized from N(0, I) unless an
// explicit start is given; samples are collected after warmup + burn-in.
inline ChainOutput run_chain(const HmcConfig& cfg,
                             const PotentialFactory& factory, RngStream& rng,
                             std::optional<Vector> x_init = std::nullopt) {
  cfg.validate();
  ChainOutput out;
  out.warmup = cfg.warmup();
  Potential pot = factory(0);
  const int n = pot.dim();

  ChainState state;
  state.x = x_init ? *x_init : rng.normal_vector(n);
  state.delta = cfg.step_size;
  state.cached = pot.eval(state.x);
  out.x_init = state.x;
  out.initial_potential = state.cached.value;
  out.initial_sigma_hat = detail::sigma_hat_or_nan(pot, state.cached);

  const int record_from = cfg.warmup();
  out.records.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int k = 0; k < cfg.iterations; ++k) {
    if (k > 0) {
      pot = factory(k);
      state.cached = pot.reweight(state.x, state.cached);
    }
    state.k = k;
    IterationRecord rec = hmc_iteration(state, pot, cfg, rng);
    const auto sigma =
        sigma_anneal_value(cfg.sigma_schedule, k, cfg.sigma_target);
    rec.sigma_used =
        sigma ? *sigma : std::numeric_limits<double>::quiet_NaN();
    out.records.push_back(rec);
    if (k >= record_from) {
      out.samples_xT.push_back(state.x);
      out.samples_x0.push_back(state.cached.x0.size() ? state.cached.x0
                                                      : state.x);
    }
  }
  return out;
}

// Unadjusted Langevin step: x' = x - delta grad U(x) + sqrt(2 delta) z.
template <typename Target>
Vector ula_step(const Target& target, const Vector& x, double delta,
                RngStream& rng) {
  require(delta >= 0.0, "ULA step size must be nonnegative");
  const PotentialEval e = target.eval(x);
  return x - delta * e.grad +
         std::sqrt(2.0 * delta) * rng.normal_vector(static_cast<int>(x.size()));
}

// log acceptance ratio of the MALA proposal x -> x2 given both
// evaluations; exposed separately so the correction can be checked
// directly.
inline double mala_log_accept(const PotentialEval& e, const Vector& x,
                              const PotentialEval& e2, const Vector& x2,
                              double delta) {
  const Vector mean_fwd = x - delta * e.grad;
  const Vector mean_rev = x2 - delta * e2.grad;
  const double logq_fwd = -(x2 - mean_fwd).squaredNorm() / (4.0 * delta);
  const double logq_rev = -(x - mean_rev).squaredNorm() / (4.0 * delta);
  return (e.value - e2.value) + (logq_rev - logq_fwd);
}

// ULA proposal with the asymmetric-proposal Metropolis correction.
template <typename Target>
std::pair<Vector, bool> mala_step(const Target& target, const Vector& x,
                                  double delta, RngStream& rng) {
  require(delta > 0.0, "MALA step size must be positive");
  const PotentialEval e = target.eval(x);
  const Vector x2 = x - delta * e.grad +
                    std::sqrt(2.0 * delta) *
                        rng.normal_vector(static_cast<int>(x.size()));
  PotentialEval e2;
  double log_acc = -std::numeric_limits<double>::infinity();
  try {
    e2 = target.eval(x2);
    log_acc = mala_log_accept(e, x, e2, x2, delta);
  } catch (const DivergenceError&) {
  }
  if (rng.uniform() < std::exp(log_acc)) return {x2, true};
  return {x, false};
}

template <typename Target>
struct MapResult {
  Vector x;
  std::vector<double> loss_trace;
};

// Plain gradient descent on the potential; the mode-trapping baseline.
template <typename Target>
MapResult<Target> map_descent(const Target& target, Vector x,
                              double learning_rate, int iterations) {
  require(learning_rate >= 0.0, "learning rate must be nonnegative");
  require(iterations >= 0, "iterations must be nonnegative");
  MapResult<Target> res;
  res.loss_trace.reserve(static_cast<std::size_t>(iterations) + 1);
  for (int i = 0; i < iterations; ++i) {
    const PotentialEval e = target.eval(x);
    res.loss_trace.push_back(e.value);
    x -= learning_rate * e.grad;
  }
  res.loss_trace.push_back(target.eval(x).value);
  res.x = std::move(x);
  return res;
}

}  // namespace nhmc

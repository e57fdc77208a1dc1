#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nhmc/core.hpp"

namespace nhmc {

// Discrete diffusion variance schedule with cumulative signal-retention
// factors alpha_bar[t] = prod_{s<=t} (1 - beta[s]).
struct AlphaBarSchedule {
  int total_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  double alpha_bar_at(int t) const {
    require(t >= 0 && t < total_steps,
            "timestep out of range: " + std::to_string(t));
    return alpha_bar[static_cast<std::size_t>(t)];
  }
};

inline AlphaBarSchedule schedule_from_betas(std::vector<double> beta) {
  require(!beta.empty(), "schedule needs at least one step");
  AlphaBarSchedule s;
  s.total_steps = static_cast<int>(beta.size());
  s.alpha_bar.reserve(beta.size());
  double prod = 1.0;
  for (double b : beta) {
    require(b > 0.0 && b < 1.0, "beta values must lie in (0, 1)");
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(beta);
  return s;
}

inline AlphaBarSchedule build_linear_beta_schedule(int total_steps,
                                                   double beta_min = 1e-4,
                                                   double beta_max = 0.02) {
  require(total_steps >= 1, "total_steps must be >= 1");
  require(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max,
          "beta bounds must satisfy 0 < beta_min <= beta_max < 1");
  std::vector<double> beta(static_cast<std::size_t>(total_steps));
  for (int t = 0; t < total_steps; ++t) {
    beta[static_cast<std::size_t>(t)] =
        total_steps == 1
            ? beta_min
            : beta_min + (beta_max - beta_min) * t / (total_steps - 1);
  }
  return schedule_from_betas(std::move(beta));
}

// Decoder-visited timesteps, strictly increasing; decoding starts from the
// largest entry. Empty only for an identity-configured decoder.
struct TimestepSchedule {
  std::vector<int> indices;
};

inline TimestepSchedule timesteps_from_indices(const AlphaBarSchedule& s,
                                               std::vector<int> indices) {
  require(!indices.empty(), "timestep list must be nonempty");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < s.total_steps,
            "timestep index out of range: " + std::to_string(indices[i]));
    if (i > 0)
      require(indices[i] > indices[i - 1],
              "timestep indices must be strictly increasing");
  }
  return TimestepSchedule{std::move(indices)};
}

// `count` timesteps spread evenly over (0, t_max]: index i = round(i *
// t_max / count), ties toward the larger index. The largest returned index
// is always t_max.
inline TimestepSchedule select_timesteps(const AlphaBarSchedule& s, int count,
                                         int t_max) {
  require(count >= 1, "count must be >= 1");
  require(t_max > 0 && t_max < s.total_steps,
          "t_max must lie in (0, total_steps)");
  require(count <= t_max, "count must not exceed t_max");
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 1; i <= count; ++i) {
    idx[static_cast<std::size_t>(i - 1)] = static_cast<int>(
        std::floor(static_cast<double>(i) * t_max / count + 0.5));
  }
  return timesteps_from_indices(s, std::move(idx));
}

// Measurement-noise warmup schedule sigma_{y,k}.
struct SigmaAnnealSchedule {
  enum class Kind { linear, sqrt_shape, none };
  Kind kind = Kind::none;
  int warmup_iters = 0;
  double offset = 0.0;
  double scale = 0.0;
};

inline SigmaAnnealSchedule make_linear_anneal(double offset, double scale,
                                              int warmup_iters) {
  require(warmup_iters >= 0, "warmup_iters must be nonnegative");
  require(offset > 0.0 && scale >= 0.0,
          "anneal schedule needs offset > 0 and scale >= 0");
  return {SigmaAnnealSchedule::Kind::linear, warmup_iters, offset, scale};
}

inline SigmaAnnealSchedule make_sqrt_anneal(double offset, double scale,
                                            int warmup_iters) {
  require(warmup_iters >= 0, "warmup_iters must be nonnegative");
  require(offset > 0.0 && scale >= 0.0,
          "anneal schedule needs offset > 0 and scale >= 0");
  return {SigmaAnnealSchedule::Kind::sqrt_shape, warmup_iters, offset, scale};
}

inline SigmaAnnealSchedule no_anneal() { return {}; }

// Schedule value at iteration k. Returns the annealed sigma during warmup
// (clamped below by sigma_target when one is known). Past warmup it returns
// sigma_target, or nullopt to signal the adaptive (Jeffreys) regime.
inline std::optional<double> sigma_anneal_value(
    const SigmaAnnealSchedule& s, int k,
    std::optional<double> sigma_target = std::nullopt) {
  require(k >= 0, "iteration index must be nonnegative");
  if (s.kind == SigmaAnnealSchedule::Kind::none || k >= s.warmup_iters)
    return sigma_target;
  const double frac = 1.0 - static_cast<double>(k) / s.warmup_iters;
  double v = s.kind == SigmaAnnealSchedule::Kind::linear
                 ? s.offset + s.scale * frac
                 : s.offset + s.scale * std::sqrt(frac);
  if (sigma_target) v = std::max(v, *sigma_target);
  return v;
}

}  // namespace nhmc

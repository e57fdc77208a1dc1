#pragma once

#include <cmath>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/prior.hpp"
#include "nhmc/schedules.hpp"

namespace nhmc {

// Deterministic DDIM decoder D: x_T -> x_hat_0 over a fixed timestep
// schedule, with reverse-mode differentiation through the analytic score.
//
// Visiting levels a (current) -> b (next), with s = score of the marginal
// at a:
//   eps    = -sqrt(1-a) s
//   x0_hat = (x + (1-a) s) / sqrt(a)          (Tweedie)
//   x'     = sqrt(b/a) (x + (1-a) s) - sqrt((1-a)(1-b)) s
// After the smallest visited timestep the last Tweedie estimate is
// returned.
class DdimDecoder {
 public:
  DdimDecoder(const AlphaBarSchedule& schedule, const TimestepSchedule& steps,
              GmmPrior prior)
      : prior_(std::move(prior)) {
    require(!steps.indices.empty(),
            "timestep list is empty; use DdimDecoder::identity() for an "
            "identity decoder");
    // visit order: largest timestep first, so alpha_bar ascends
    for (auto it = steps.indices.rbegin(); it != steps.indices.rend(); ++it) {
      // keep the first visited level strictly away from alpha_bar -> 0
      const double a = std::max(schedule.alpha_bar_at(*it), 1e-6);
      abar_visit_.push_back(a);
      marginals_.push_back(marginal_at(prior_, a));
    }
    dim_ = prior_.dim;
  }

  static DdimDecoder identity(int dim) {
    DdimDecoder d;
    d.identity_ = true;
    d.dim_ = dim;
    return d;
  }

  bool is_identity() const { return identity_; }
  int dim() const { return dim_; }
  int num_steps() const { return static_cast<int>(abar_visit_.size()); }
  const GmmPrior& prior() const { return prior_; }
  const std::vector<double>& visited_alpha_bars() const { return abar_visit_; }

  struct Tape {
    std::vector<Vector> inputs;  // x entering each step, visit order
  };

  Vector decode(const Vector& x_T) const { return decode(x_T, nullptr); }

  Vector decode(const Vector& x_T, Tape* tape) const {
    require(static_cast<int>(x_T.size()) == dim_,
            "decoder input has wrong dimension");
    if (!x_T.allFinite())
      throw DivergenceError("decoder input is not finite");
    if (identity_) return x_T;
    Vector x = x_T;
    const int n_steps = num_steps();
    for (int i = 0; i < n_steps; ++i) {
      if (tape) tape->inputs.push_back(x);
      const double a = abar_visit_[static_cast<std::size_t>(i)];
      const Vector s = score(marginals_[static_cast<std::size_t>(i)], x);
      if (i + 1 < n_steps) {
        const double b = abar_visit_[static_cast<std::size_t>(i + 1)];
        x = std::sqrt(b / a) * (x + (1.0 - a) * s) -
            std::sqrt((1.0 - a) * (1.0 - b)) * s;
      } else {
        x = (x + (1.0 - a) * s) / std::sqrt(a);
      }
      if (!x.allFinite())
        throw DivergenceError(
            "decoder produced a non-finite state; check the schedule");
    }
    return x;
  }

  // cotangent^T dD/dx_T by reverse accumulation over the recorded step
  // inputs.
  Vector vjp_from_tape(const Tape& tape, const Vector& cotangent) const {
    if (identity_) return cotangent;
    require(static_cast<int>(tape.inputs.size()) == num_steps(),
            "tape does not match the decoder schedule");
    Vector w = cotangent;
    for (int i = num_steps() - 1; i >= 0; --i) {
      const std::size_t u = static_cast<std::size_t>(i);
      const double a = abar_visit_[u];
      if (i + 1 < num_steps()) {
        const double b = abar_visit_[u + 1];
        const double lin = std::sqrt(b / a);
        const double kappa =
            lin * (1.0 - a) - std::sqrt((1.0 - a) * (1.0 - b));
        w = lin * w + kappa * score_vjp(marginals_[u], tape.inputs[u], w);
      } else {
        w = (w + (1.0 - a) * score_vjp(marginals_[u], tape.inputs[u], w)) /
            std::sqrt(a);
      }
    }
    return w;
  }

  Vector decode_vjp(const Vector& x_T, const Vector& cotangent) const {
    require(static_cast<int>(cotangent.size()) == dim_,
            "cotangent has wrong dimension");
    if (identity_) {
      require(static_cast<int>(x_T.size()) == dim_,
              "decoder input has wrong dimension");
      return cotangent;
    }
    Tape tape;
    decode(x_T, &tape);
    return vjp_from_tape(tape, cotangent);
  }

 private:
  DdimDecoder() = default;

  bool identity_ = false;
  int dim_ = 0;
  GmmPrior prior_;
  std::vector<double> abar_visit_;
  std::vector<MarginalGmm> marginals_;
};

}  // namespace nhmc

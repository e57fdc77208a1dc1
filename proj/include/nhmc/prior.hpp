#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/rng.hpp"

namespace nhmc {

// Gaussian mixture over clean signals with isotropic per-component
// covariance c_i * I.
struct GmmPrior {
  int dim = 0;
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<double> variances;

  int components() const { return static_cast<int>(weights.size()); }
};

inline GmmPrior make_gmm(std::vector<double> weights, std::vector<Vector> means,
                         std::vector<double> variances) {
  require(!weights.empty(), "mixture needs at least one component");
  require(weights.size() == means.size() && weights.size() == variances.size(),
          "weights, means and variances must have the same length");
  const int dim = static_cast<int>(means.front().size());
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    require(weights[i] >= 0.0, "mixture weights must be nonnegative");
    require(variances[i] > 0.0, "component variances must be positive");
    require(static_cast<int>(means[i].size()) == dim,
            "all component means must have the same dimension");
    sum += weights[i];
  }
  require(std::abs(sum - 1.0) <= 1e-12, "mixture weights must sum to 1");
  return GmmPrior{dim, std::move(weights), std::move(means),
                  std::move(variances)};
}

// Marginal of the prior under the forward diffusion at a given alpha_bar:
// component means scale by sqrt(abar), variances become abar*v + (1-abar).
struct MarginalGmm {
  int dim = 0;
  double alpha_bar = 1.0;
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<double> variances;

  int components() const { return static_cast<int>(weights.size()); }
};

inline MarginalGmm marginal_at(const GmmPrior& prior, double alpha_bar) {
  require(alpha_bar > 0.0 && alpha_bar <= 1.0,
          "alpha_bar must lie in (0, 1]");
  MarginalGmm m;
  m.dim = prior.dim;
  m.alpha_bar = alpha_bar;
  m.weights = prior.weights;
  const double root = std::sqrt(alpha_bar);
  m.means.reserve(prior.means.size());
  m.variances.reserve(prior.variances.size());
  for (std::size_t i = 0; i < prior.means.size(); ++i) {
    m.means.push_back(root * prior.means[i]);
    m.variances.push_back(alpha_bar * prior.variances[i] + (1.0 - alpha_bar));
  }
  return m;
}

namespace detail {

// Per-component log w_i + log N(x; m_i, c_i I), and their log-sum-exp.
inline double component_log_terms(const MarginalGmm& m, const Vector& x,
                                  std::vector<double>& logp) {
  const int k = m.components();
  logp.resize(static_cast<std::size_t>(k));
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    const double c = m.variances[static_cast<std::size_t>(i)];
    const double w = m.weights[static_cast<std::size_t>(i)];
    const double sq = (x - m.means[static_cast<std::size_t>(i)]).squaredNorm();
    logp[static_cast<std::size_t>(i)] =
        std::log(w) - 0.5 * m.dim * std::log(2.0 * std::numbers::pi * c) -
        0.5 * sq / c;
    mx = std::max(mx, logp[static_cast<std::size_t>(i)]);
  }
  double acc = 0.0;
  for (double lp : logp) acc += std::exp(lp - mx);
  return mx + std::log(acc);
}

inline void responsibilities(const MarginalGmm& m, const Vector& x,
                             std::vector<double>& r) {
  std::vector<double> logp;
  const double lse = component_log_terms(m, x, logp);
  r.resize(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i)
    r[i] = std::exp(logp[i] - lse);
}

}  // namespace detail

inline double gmm_log_density(const MarginalGmm& m, const Vector& x) {
  require(static_cast<int>(x.size()) == m.dim, "dimension mismatch");
  std::vector<double> logp;
  return detail::component_log_terms(m, x, logp);
}

// grad_x log p(x) = sum_i r_i(x) (m_i - x)/c_i with softmax
// responsibilities r_i.
inline Vector score(const MarginalGmm& m, const Vector& x) {
  require(static_cast<int>(x.size()) == m.dim, "dimension mismatch");
  std::vector<double> r;
  detail::responsibilities(m, x, r);
  Vector s = Vector::Zero(m.dim);
  for (int i = 0; i < m.components(); ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    if (r[u] == 0.0) continue;
    s += (r[u] / m.variances[u]) * (m.means[u] - x);
  }
  return s;
}

// Exact epsilon-prediction for the mixture: -sqrt(1 - abar) * score(x).
inline Vector eps_predict(const MarginalGmm& m, const Vector& x,
                          double alpha_bar) {
  return (-std::sqrt(1.0 - alpha_bar)) * score(m, x);
}

// cotangent^T J with J the (symmetric) Jacobian of the score at x:
// J = sum_i r_i g_i g_i^T - s s^T - (sum_i r_i / c_i) I, g_i = (m_i - x)/c_i.
// The Jacobian is never materialized; cost is O(components * dim).
inline Vector score_vjp(const MarginalGmm& m, const Vector& x,
                        const Vector& cotangent) {
  require(static_cast<int>(x.size()) == m.dim, "dimension mismatch");
  require(static_cast<int>(cotangent.size()) == m.dim, "dimension mismatch");
  std::vector<double> r;
  detail::responsibilities(m, x, r);
  Vector s = Vector::Zero(m.dim);
  Vector acc = Vector::Zero(m.dim);
  double trace_term = 0.0;
  for (int i = 0; i < m.components(); ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    if (r[u] == 0.0) continue;
    const Vector g = (m.means[u] - x) / m.variances[u];
    acc += (r[u] * g.dot(cotangent)) * g;
    s += r[u] * g;
    trace_term += r[u] / m.variances[u];
  }
  return acc - s.dot(cotangent) * s - trace_term * cotangent;
}

// Named prior presets used by the experiment config. `dim`, `components`
// and `seed` only apply to random-k.
inline GmmPrior preset_prior(const std::string& name, int dim = 0,
                             int components = 0, std::uint64_t seed = 0) {
  if (name == "bimodal-1d") {
    Vector lo(1), hi(1);
    lo << -1.0;
    hi << 1.0;
    return make_gmm({0.5, 0.5}, {lo, hi}, {0.09, 0.09});
  }
  if (name == "grid-2d") {
    std::vector<double> w;
    std::vector<Vector> means;
    std::vector<double> v;
    for (int a = -1; a <= 1; ++a) {
      for (int b = -1; b <= 1; ++b) {
        Vector mu(2);
        mu << static_cast<double>(a), static_cast<double>(b);
        means.push_back(mu);
        w.push_back(1.0 / 9.0);
        v.push_back(0.04);
      }
    }
    // nudge the first weight so the weights sum to exactly 1
    double sum = 0.0;
    for (double x : w) sum += x;
    w[0] += 1.0 - sum;
    return make_gmm(std::move(w), std::move(means), std::move(v));
  }
  if (name == "random-k") {
    require(dim >= 1, "random-k preset needs dim >= 1");
    require(components >= 1, "random-k preset needs components >= 1");
    RngStream rng(seed, "prior-preset");
    std::vector<double> w(static_cast<std::size_t>(components));
    std::vector<Vector> means;
    std::vector<double> v(static_cast<std::size_t>(components));
    double sum = 0.0;
    for (int i = 0; i < components; ++i) {
      w[static_cast<std::size_t>(i)] = rng.uniform_in(0.2, 1.0);
      sum += w[static_cast<std::size_t>(i)];
      Vector mu(dim);
      for (int j = 0; j < dim; ++j) mu[j] = rng.uniform_in(-2.0, 2.0);
      means.push_back(mu);
      v[static_cast<std::size_t>(i)] = rng.uniform_in(0.05, 0.5);
    }
    for (double& x : w) x /= sum;
    double total = 0.0;
    for (double x : w) total += x;
    w[0] += 1.0 - total;
    return make_gmm(std::move(w), std::move(means), std::move(v));
  }
  throw ConfigError("unknown prior preset: " + name);
}

// Standard normal prior N(0, I) as a one-component mixture.
inline GmmPrior standard_normal_prior(int dim) {
  require(dim >= 1, "dim must be >= 1");
  return make_gmm({1.0}, {Vector::Zero(dim)}, {1.0});
}

}  // namespace nhmc

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/likelihood.hpp"
#include "nhmc/prior.hpp"
#include "nhmc/sampler.hpp"

namespace nhmc {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Moments of the (unnormalized) product of two Gaussian densities, plus
// the log normalization constant: N(x; m1, S1) N(x; m2, S2) =
// exp(log_scale) N(x; m, S).
struct GaussianProduct {
  Vector mean;
  Matrix cov;
  double log_scale = 0.0;
};

inline GaussianProduct gaussian_product(const Vector& m1, const Matrix& S1,
                                        const Vector& m2, const Matrix& S2) {
  const int n = static_cast<int>(m1.size());
  const Matrix P1 = S1.ldlt().solve(Matrix::Identity(n, n));
  const Matrix P2 = S2.ldlt().solve(Matrix::Identity(n, n));
  GaussianProduct g;
  g.cov = (P1 + P2).ldlt().solve(Matrix::Identity(n, n));
  g.mean = g.cov * (P1 * m1 + P2 * m2);
  const Matrix Ssum = S1 + S2;
  const Eigen::LLT<Matrix> llt(Ssum);
  const Vector d = m1 - m2;
  double log_det = 0.0;
  for (int i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  g.log_scale = -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det +
                        d.dot(Ssum.ldlt().solve(d)));
  return g;
}

// Exact or grid-based ground-truth posterior used for verification.
struct PosteriorOracle {
  enum class Kind { conjugate_gmm, grid };
  Kind kind = Kind::conjugate_gmm;

  // conjugate: posterior Gaussian mixture
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<Matrix> covs;

  // grid: axes (1 or 2) and normalized density values; density(i, j) is
  // the value at (axes[0][i], axes[1][j]); for 1-D the column index is 0.
  std::vector<std::vector<double>> axes;
  Matrix density;

  int dim() const {
    return kind == Kind::conjugate_gmm ? static_cast<int>(means.front().size())
                                       : static_cast<int>(axes.size());
  }

  Vector mean() const {
    if (kind == Kind::conjugate_gmm) {
      Vector m = Vector::Zero(dim());
      for (std::size_t i = 0; i < weights.size(); ++i)
        m += weights[i] * means[i];
      return m;
    }
    Vector m = Vector::Zero(dim());
    grid_reduce([&](const Vector& x, double w) { m += w * x; });
    return m;
  }

  Matrix covariance() const {
    const Vector m = mean();
    const int n = dim();
    Matrix c = Matrix::Zero(n, n);
    if (kind == Kind::conjugate_gmm) {
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const Vector d = means[i] - m;
        c += weights[i] * (covs[i] + d * d.transpose());
      }
      return c;
    }
    grid_reduce([&](const Vector& x, double w) {
      const Vector d = x - m;
      c += w * d * d.transpose();
    });
    return c;
  }

  // P(x_axis <= t) of the marginal along one axis.
  double marginal_cdf(int axis, double t) const {
    require(axis >= 0 && axis < dim(), "axis out of range");
    if (kind == Kind::conjugate_gmm) {
      double acc = 0.0;
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const double mu = means[i][axis];
        const double sd = std::sqrt(covs[i](axis, axis));
        acc += weights[i] * normal_cdf((t - mu) / sd);
      }
      return acc;
    }
    const std::vector<double>& ax = axes[static_cast<std::size_t>(axis)];
    std::vector<double> marg = marginal_density(axis);
    // cumulative trapezoid, linearly interpolated at t
    if (t <= ax.front()) return 0.0;
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < ax.size(); ++i) {
      const double h = ax[i + 1] - ax[i];
      if (t >= ax[i + 1]) {
        cum += 0.5 * h * (marg[i] + marg[i + 1]);
        continue;
      }
      const double f = (t - ax[i]) / h;
      const double mt = marg[i] + f * (marg[i + 1] - marg[i]);
      cum += 0.5 * (t - ax[i]) * (marg[i] + mt);
      break;
    }
    return std::clamp(cum, 0.0, 1.0);
  }

  std::vector<double> marginal_density(int axis) const {
    require(kind == Kind::grid, "marginal_density requires a grid oracle");
    const std::vector<double>& ax = axes[static_cast<std::size_t>(axis)];
    std::vector<double> marg(ax.size(), 0.0);
    if (axes.size() == 1) {
      for (std::size_t i = 0; i < ax.size(); ++i) marg[i] = density(i, 0);
      return marg;
    }
    const int other = 1 - axis;
    const std::vector<double>& ox = axes[static_cast<std::size_t>(other)];
    for (std::size_t i = 0; i < ax.size(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j + 1 < ox.size(); ++j) {
        const double f0 = axis == 0 ? density(i, j) : density(j, i);
        const double f1 = axis == 0 ? density(i, j + 1) : density(j + 1, i);
        acc += 0.5 * (ox[j + 1] - ox[j]) * (f0 + f1);
      }
      marg[i] = acc;
    }
    return marg;
  }

  // Integral of the stored grid density (trapezoid); 1 after normalization.
  double grid_total_mass() const {
    double mass = 0.0;
    grid_reduce([&](const Vector&, double w) { mass += w; });
    return mass;
  }

 private:
  template <typename F>
  void grid_reduce(F&& f) const {
    require(kind == Kind::grid, "grid reduction requires a grid oracle");
    const auto& ax0 = axes[0];
    auto trap = [](const std::vector<double>& ax, std::size_t i) {
      double w = 0.0;
      if (i > 0) w += 0.5 * (ax[i] - ax[i - 1]);
      if (i + 1 < ax.size()) w += 0.5 * (ax[i + 1] - ax[i]);
      return w;
    };
    if (axes.size() == 1) {
      for (std::size_t i = 0; i < ax0.size(); ++i) {
        Vector x(1);
        x << ax0[i];
        f(x, density(i, 0) * trap(ax0, i));
      }
      return;
    }
    const auto& ax1 = axes[1];
    for (std::size_t i = 0; i < ax0.size(); ++i) {
      for (std::size_t j = 0; j < ax1.size(); ++j) {
        Vector x(2);
        x << ax0[i], ax1[j];
        f(x, density(i, j) * trap(ax0, i) * trap(ax1, j));
      }
    }
  }
};

// Exact posterior over x0 for a linear operator, Gaussian noise and a GMM
// prior: per-component Gaussian products with evidence reweighting.
inline PosteriorOracle conjugate_posterior(const GmmPrior& prior,
                                           const Matrix& A, double sigma_y,
                                           const Vector& y) {
  require(sigma_y > 0.0, "conjugate posterior needs sigma_y > 0");
  const int n = prior.dim;
  const int m = static_cast<int>(A.rows());
  require(static_cast<int>(A.cols()) == n, "operator matrix has wrong shape");
  require(static_cast<int>(y.size()) == m, "measurement has wrong length");

  PosteriorOracle post;
  post.kind = PosteriorOracle::Kind::conjugate_gmm;
  const Matrix AtA = A.transpose() * A;
  const Matrix AAt = A * A.transpose();
  std::vector<double> log_w(prior.weights.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < prior.components(); ++i) {
    const std::size_t u = static_cast<std::size_t>(i);
    const double v = prior.variances[u];
    const Matrix info =
        AtA / (sigma_y * sigma_y) + Matrix::Identity(n, n) / v;
    const Matrix cov = info.ldlt().solve(Matrix::Identity(n, n));
    const Vector mu = cov * (A.transpose() * y / (sigma_y * sigma_y) +
                             prior.means[u] / v);
    post.means.push_back(mu);
    post.covs.push_back(cov);
    // evidence: N(y; A mu_i, sigma^2 I + v A A^T)
    const Matrix S = sigma_y * sigma_y * Matrix::Identity(m, m) + v * AAt;
    const Eigen::LLT<Matrix> llt(S);
    double log_det = 0.0;
    for (int r = 0; r < m; ++r)
      log_det += 2.0 * std::log(llt.matrixL()(r, r));
    const Vector d = y - A * prior.means[u];
    const double log_ev =
        -0.5 * (m * std::log(2.0 * std::numbers::pi) + log_det +
                d.dot(S.ldlt().solve(d)));
    log_w[u] = std::log(prior.weights[u]) + log_ev;
    mx = std::max(mx, log_w[u]);
  }
  double sum = 0.0;
  for (double lw : log_w) sum += std::exp(lw - mx);
  for (double lw : log_w) post.weights.push_back(std::exp(lw - mx) / sum);
  return post;
}

inline PosteriorOracle conjugate_posterior(const GmmPrior& prior,
                                           const ForwardOperator& op,
                                           double sigma_y, const Vector& y) {
  require(op.is_linear(), "conjugate posterior requires a linear operator");
  return conjugate_posterior(prior, op.matrix(), sigma_y, y);
}

// Brute-force posterior over a 1- or 2-D noise space: exp(-U) evaluated on
// a regular grid and normalized by the trapezoid rule.
inline PosteriorOracle grid_posterior(
    const Potential& pot, const std::vector<std::pair<double, double>>& bounds,
    int resolution) {
  const int dim = pot.dim();
  require(dim >= 1 && dim <= 2, "grid posterior supports dim <= 2 only");
  require(static_cast<int>(bounds.size()) == dim,
          "one bounds pair per dimension required");
  require(resolution >= 8, "grid resolution must be >= 8");
  PosteriorOracle post;
  post.kind = PosteriorOracle::Kind::grid;
  for (const auto& [lo, hi] : bounds) {
    require(lo < hi, "grid bounds must satisfy lo < hi");
    std::vector<double> ax(static_cast<std::size_t>(resolution));
    for (int i = 0; i < resolution; ++i)
      ax[static_cast<std::size_t>(i)] =
          lo + (hi - lo) * i / (resolution - 1);
    post.axes.push_back(std::move(ax));
  }
  const int rows = resolution;
  const int cols = dim == 2 ? resolution : 1;
  Matrix logu(rows, cols);
  double min_u = std::numeric_limits<double>::infinity();
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      Vector x(dim);
      x[0] = post.axes[0][static_cast<std::size_t>(i)];
      if (dim == 2) x[1] = post.axes[1][static_cast<std::size_t>(j)];
      logu(i, j) = pot.potential(x).value;
      min_u = std::min(min_u, logu(i, j));
    }
  }
  post.density = (-(logu.array() - min_u)).exp().matrix();
  const double mass = post.grid_total_mass();
  require(mass > 0.0 && std::isfinite(mass),
          "grid posterior mass is degenerate; widen the bounds");
  post.density /= mass;
  return post;
}

// Expected squared residual of a linear-Gaussian problem whose decoder
// scatters around the truth with isotropic spread sigma_0:
//   Sigma_post = (A^T A / sigma_y^2 + I / sigma_0^2)^{-1}
//   B = I - A Sigma_post A^T / sigma_y^2
//   E||y - A x0||^2 = sigma_y^2 tr(B B^T) + tr(A Sigma_post A^T)
inline double expected_residual(const Matrix& A, double sigma_y,
                                double sigma_0) {
  require(sigma_y > 0.0 && sigma_0 > 0.0,
          "expected_residual needs positive sigmas");
  const int n = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  const Matrix info = A.transpose() * A / (sigma_y * sigma_y) +
                      Matrix::Identity(n, n) / (sigma_0 * sigma_0);
  const Eigen::LDLT<Matrix> ldlt(info);
  require(ldlt.info() == Eigen::Success, "inner matrix factorization failed");
  const Matrix cov = ldlt.solve(Matrix::Identity(n, n));
  const Matrix S = A * cov * A.transpose();
  const Matrix B = Matrix::Identity(m, m) - S / (sigma_y * sigma_y);
  return sigma_y * sigma_y * B.squaredNorm() + S.trace();
}

// Residual-based noise estimate ||y - A(x0)|| / sqrt(m).
inline double sigma_hat(const ForwardProblem& problem, const Vector& x0) {
  const Vector r = problem.y - problem.op.apply(x0);
  return r.norm() / std::sqrt(static_cast<double>(problem.op.output_dim()));
}

// --- chain diagnostics -----------------------------------------------

// Effective sample size of a scalar series by initial-positive-sequence
// truncation of the autocorrelation. A constant chain reports 1.
inline double effective_sample_size(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 2) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double c0 = 0.0;
  for (double v : x) c0 += (v - mean) * (v - mean);
  c0 /= static_cast<double>(n);
  if (c0 == 0.0) return 1.0;
  auto autocov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t)
      acc += (x[t] - mean) * (x[t + lag] - mean);
    return acc / static_cast<double>(n);
  };
  double tau = -1.0;
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    const double g = autocov(lag) / c0 + autocov(lag + 1) / c0;
    if (g <= 0.0) break;
    tau += 2.0 * g;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return static_cast<double>(n) / tau;
}

inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf) {
  require(!samples.empty(), "KS statistic needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double F = cdf(samples[i]);
    d = std::max(d, std::abs((static_cast<double>(i) + 1.0) / n - F));
    d = std::max(d, std::abs(static_cast<double>(i) / n - F));
  }
  return d;
}

// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
  const double rn = std::sqrt(static_cast<double>(n));
  const double lambda = (rn + 0.12 + 0.11 / rn) * d;
  double acc = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    acc += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(acc, 0.0, 1.0);
}

// Critical KS statistic at significance alpha for n samples.
inline double ks_critical_value(std::size_t n, double alpha) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  const double rn = std::sqrt(static_cast<double>(n));
  return c / (rn + 0.12 + 0.11 / rn);
}

struct MetricsReport {
  int n_samples = 0;
  double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
  double mean_retries = std::numeric_limits<double>::quiet_NaN();
  Vector mean_xT;
  Vector mean_x0;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
  double ks_stat = std::numeric_limits<double>::quiet_NaN();
  double ks_pvalue = std::numeric_limits<double>::quiet_NaN();
  double sigma_hat_final = std::numeric_limits<double>::quiet_NaN();
  double sigma_hat_post_mean = std::numeric_limits<double>::quiet_NaN();
};

// Sample moments, posterior-mean MSE/PSNR against x_true, KS against the
// oracle marginals (dim <= 2), acceptance rate and ESS.
inline MetricsReport chain_metrics(const ChainOutput& out,
                                   const PosteriorOracle* oracle = nullptr,
                                   const Vector* x_true = nullptr,
                                   double peak = 1.0) {
  MetricsReport rep;
  rep.n_samples = static_cast<int>(out.samples_xT.size());
  rep.acceptance_rate = out.acceptance_rate();
  if (!out.records.empty()) {
    double acc = 0.0;
    for (const auto& r : out.records) acc += r.retries;
    rep.mean_retries = acc / static_cast<double>(out.records.size());
    rep.sigma_hat_final = out.records.back().sigma_hat;
    double sh = 0.0;
    int cnt = 0;
    for (std::size_t i = static_cast<std::size_t>(out.warmup);
         i < out.records.size(); ++i) {
      if (std::isnan(out.records[i].sigma_hat)) continue;
      sh += out.records[i].sigma_hat;
      ++cnt;
    }
    if (cnt > 0) rep.sigma_hat_post_mean = sh / cnt;
  }
  if (rep.n_samples == 0) return rep;

  const int n = static_cast<int>(out.samples_xT.front().size());
  rep.mean_xT = Vector::Zero(n);
  for (const auto& s : out.samples_xT) rep.mean_xT += s;
  rep.mean_xT /= static_cast<double>(rep.n_samples);

  const int n0 = static_cast<int>(out.samples_x0.front().size());
  rep.mean_x0 = Vector::Zero(n0);
  for (const auto& s : out.samples_x0) rep.mean_x0 += s;
  rep.mean_x0 /= static_cast<double>(rep.n_samples);

  if (x_true) {
    rep.mse = (rep.mean_x0 - *x_true).squaredNorm() / x_true->size();
    rep.psnr = rep.mse == 0.0
                   ? std::numeric_limits<double>::infinity()
                   : 10.0 * std::log10(peak * peak / rep.mse);
  }

  double min_ess = std::numeric_limits<double>::infinity();
  for (int j = 0; j < n; ++j) {
    std::vector<double> coord(static_cast<std::size_t>(rep.n_samples));
    for (int i = 0; i < rep.n_samples; ++i)
      coord[static_cast<std::size_t>(i)] = out.samples_xT[
          static_cast<std::size_t>(i)][j];
    min_ess = std::min(min_ess, effective_sample_size(coord));
  }
  rep.ess = min_ess;

  if (oracle && oracle->dim() <= 2 && oracle->dim() == n) {
    double worst = 0.0;
    for (int axis = 0; axis < oracle->dim(); ++axis) {
      std::vector<double> coord(static_cast<std::size_t>(rep.n_samples));
      for (int i = 0; i < rep.n_samples; ++i)
        coord[static_cast<std::size_t>(i)] =
            out.samples_xT[static_cast<std::size_t>(i)][axis];
      const double d = ks_statistic(
          coord, [&](double t) { return oracle->marginal_cdf(axis, t); });
      worst = std::max(worst, d);
    }
    rep.ks_stat = worst;
    rep.ks_pvalue =
        ks_pvalue(worst, static_cast<std::size_t>(rep.n_samples));
  }
  return rep;
}

}  // namespace nhmc

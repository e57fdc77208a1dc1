#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "nhmc/oracle.hpp"
#include "nhmc/rng.hpp"
#include "support/test_util.hpp"

using namespace nhmc;

namespace {

Vector vec(std::initializer_list<double> vals) {
  Vector v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

double normal_pdf(double x, double mu, double var) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) /
         std::sqrt(2.0 * std::numbers::pi * var);
}

Potential conjugate_potential() {
  const auto op = ForwardOperator::identity(1);
  ForwardProblem pb{op, NoiseModel::gaussian(1.0), vec({2.0}), std::nullopt,
                    0};
  return Potential::known_sigma(pb, DdimDecoder::identity(1), 1.0);
}

}  // namespace

TEST_CASE("gaussian product lemma on a 1-d grid", "[oracle]") {
  Matrix S1(1, 1), S2(1, 1);
  S1 << 0.49;
  S2 << 1.21;
  const Vector m1 = vec({-0.4});
  const Vector m2 = vec({0.9});
  const auto g = gaussian_product(m1, S1, m2, S2);
  for (double x = -4.0; x <= 4.0; x += 0.01) {
    const double direct =
        normal_pdf(x, m1[0], S1(0, 0)) * normal_pdf(x, m2[0], S2(0, 0));
    const double via_lemma =
        std::exp(g.log_scale) * normal_pdf(x, g.mean[0], g.cov(0, 0));
    REQUIRE(test::rel_err(via_lemma, direct, 1e-300) < 1e-8);
  }
}

TEST_CASE("bias-variance decomposition by monte carlo", "[oracle]") {
  // E ||x - a||^2 = ||mu - a||^2 + tr(Sigma) for x ~ N(mu, Sigma)
  RngStream rng(3, "lemma2");
  const Vector mu = vec({0.7, -0.4, 1.1});
  const Vector sd = vec({0.5, 1.2, 0.8});
  const Vector a = vec({-0.3, 0.5, 0.2});
  double tr = 0.0;
  for (int i = 0; i < 3; ++i) tr += sd[i] * sd[i];
  const double want = (mu - a).squaredNorm() + tr;
  const int n = 20000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    Vector x(3);
    for (int j = 0; j < 3; ++j) x[j] = mu[j] + sd[j] * rng.normal();
    const double v = (x - a).squaredNorm();
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n;
  const double se = std::sqrt((acc2 / n - mean * mean) / n);
  REQUIRE(std::abs(mean - want) < 3.0 * se);
}

TEST_CASE("conjugate posterior", "[oracle]") {
  SECTION("equal-precision 1-d update") {
    Matrix A(1, 1);
    A << 1.0;
    const auto post =
        conjugate_posterior(standard_normal_prior(1), A, 1.0, vec({2.0}));
    REQUIRE(post.mean()[0] == Catch::Approx(1.0));
    REQUIRE(post.covariance()(0, 0) == Catch::Approx(0.5));
  }
  SECTION("uninformative likelihood recovers the prior") {
    const auto prior = make_gmm({0.3, 0.7}, {vec({-1.0}), vec({2.0})},
                                {0.25, 0.5});
    Matrix A(1, 1);
    A << 1.0;
    const auto post = conjugate_posterior(prior, A, 1e6, vec({0.3}));
    for (int i = 0; i < 2; ++i) {
      REQUIRE(std::abs(post.weights[i] - prior.weights[i]) < 1e-8);
      REQUIRE(std::abs(post.means[i][0] - prior.means[i][0]) < 1e-5);
      REQUIRE(std::abs(post.covs[i](0, 0) - prior.variances[i]) < 1e-5);
    }
  }
  SECTION("masked 2-d observation matches dense quadrature") {
    const auto prior = make_gmm(
        {0.4, 0.6}, {vec({-0.8, 0.5}), vec({1.0, -0.3})}, {0.3, 0.45});
    const double sigma = 0.5;
    const Vector y = vec({0.4});
    Matrix A(1, 2);
    A << 1.0, 0.0;  // mask keeping coordinate 0
    const auto post = conjugate_posterior(prior, A, sigma, y);

    // dense numerical integration over the signal plane
    const int res = 801;
    const double lo = -6.0, hi = 6.0, h = (hi - lo) / (res - 1);
    double mass = 0.0;
    Vector mean = Vector::Zero(2);
    for (int i = 0; i < res; ++i) {
      for (int j = 0; j < res; ++j) {
        const double x0 = lo + i * h, x1 = lo + j * h;
        double prior_pdf = 0.0;
        for (int c = 0; c < 2; ++c)
          prior_pdf += prior.weights[c] *
                       normal_pdf(x0, prior.means[c][0], prior.variances[c]) *
                       normal_pdf(x1, prior.means[c][1], prior.variances[c]);
        const double lik = normal_pdf(y[0], x0, sigma * sigma);
        const double w = prior_pdf * lik *
                         (i == 0 || i == res - 1 ? 0.5 : 1.0) *
                         (j == 0 || j == res - 1 ? 0.5 : 1.0);
        mass += w;
        mean += w * vec({x0, x1});
      }
    }
    mean /= mass;
    REQUIRE(std::abs(post.mean()[0] - mean[0]) < 1e-6);
    REQUIRE(std::abs(post.mean()[1] - mean[1]) < 1e-6);
  }
  SECTION("rejects a nonpositive sigma") {
    Matrix A(1, 1);
    A << 1.0;
    REQUIRE_THROWS_AS(
        conjugate_posterior(standard_normal_prior(1), A, 0.0, vec({1.0})),
        ConfigError);
  }
  SECTION("rejects nonlinear operators") {
    const auto op = ForwardOperator::dft_magnitude(4);
    REQUIRE_THROWS_AS(
        conjugate_posterior(standard_normal_prior(4), op, 0.5,
                            Vector::Ones(op.output_dim())),
        ConfigError);
    const auto lin = ForwardOperator::avgpool(4, 2);
    const auto post = conjugate_posterior(standard_normal_prior(4), lin, 0.5,
                                          vec({0.2, -0.1}));
    REQUIRE(post.mean().size() == 4);
  }
}

TEST_CASE("grid posterior", "[oracle]") {
  const auto pot = conjugate_potential();  // posterior N(1, 0.5)
  SECTION("matches the analytic gaussian within discretization error") {
    for (int res : {101, 201}) {
      const auto grid = grid_posterior(pot, {{-5.0, 7.0}}, res);
      const double h = 12.0 / (res - 1);
      REQUIRE(std::abs(grid.mean()[0] - 1.0) < h * h);
      REQUIRE(std::abs(grid.covariance()(0, 0) - 0.5) < h * h);
      REQUIRE(grid.grid_total_mass() == Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("refinement self-consistency") {
    const auto coarse = grid_posterior(pot, {{-5.0, 7.0}}, 101);
    const auto fine = grid_posterior(pot, {{-5.0, 7.0}}, 201);
    const double h_coarse = 12.0 / 100.0;
    REQUIRE(std::abs(fine.mean()[0] - coarse.mean()[0]) <
            h_coarse * h_coarse);
  }
  SECTION("tail mass outside eight standard deviations is negligible") {
    // analytic gaussian tail bound for the N(1, 0.5) posterior
    const double sd = std::sqrt(0.5);
    const double outside = 2.0 * normal_cdf(-8.0);
    REQUIRE(outside < 1e-8);
    const auto grid =
        grid_posterior(pot, {{1.0 - 8.0 * sd, 1.0 + 8.0 * sd}}, 401);
    REQUIRE(grid.marginal_cdf(0, 1.0 - 7.9 * sd) < 1e-8);
    REQUIRE(grid.marginal_cdf(0, 1.0 + 7.9 * sd) > 1.0 - 1e-8);
  }
  SECTION("2-d grids integrate to one") {
    const auto op = ForwardOperator::avgpool(2, 2);
    ForwardProblem pb{op, NoiseModel::gaussian(0.5), vec({0.2}),
                      std::nullopt, 0};
    const auto pot2 =
        Potential::known_sigma(pb, DdimDecoder::identity(2), 0.5);
    const auto grid = grid_posterior(pot2, {{-6.0, 6.0}, {-6.0, 6.0}}, 121);
    REQUIRE(grid.grid_total_mass() == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(grid.mean().size() == 2);
  }
  SECTION("rejects more than two dimensions") {
    const auto op = ForwardOperator::identity(3);
    ForwardProblem pb{op, NoiseModel::gaussian(0.5), Vector::Zero(3),
                      std::nullopt, 0};
    const auto pot3 =
        Potential::known_sigma(pb, DdimDecoder::identity(3), 0.5);
    REQUIRE_THROWS_AS(
        grid_posterior(pot3, {{-4, 4}, {-4, 4}, {-4, 4}}, 64), ConfigError);
  }
}

TEST_CASE("expected residual statistic", "[oracle]") {
  SECTION("scalar hand case") {
    Matrix A(1, 1);
    A << 1.0;
    REQUIRE(expected_residual(A, 1.0, 1.0) == Catch::Approx(0.75));
  }
  SECTION("zero operator leaves pure noise") {
    Matrix A = Matrix::Zero(3, 2);
    REQUIRE(expected_residual(A, 0.4, 0.7) ==
            Catch::Approx(3.0 * 0.16).epsilon(1e-12));
  }
  SECTION("matches an independent eigendecomposition oracle") {
    RngStream rng(7, "residual-oracle");
    for (int trial = 0; trial < 10; ++trial) {
      const int m = 3, n = 5;
      Matrix A(m, n);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
      const double sy = 0.3, s0 = 0.8;
      // d_j = s_j^2 s0^2 / (s_j^2 s0^2 + sy^2) per singular value:
      // E = sy^2 [m - sum d_j (1 - d_j)]
      const Eigen::JacobiSVD<Matrix> svd(A);
      double acc = 0.0;
      for (int j = 0; j < svd.singularValues().size(); ++j) {
        const double s2 = svd.singularValues()[j] * svd.singularValues()[j];
        const double d = s2 * s0 * s0 / (s2 * s0 * s0 + sy * sy);
        acc += d * (1.0 - d);
      }
      const double want = sy * sy * (m - acc);
      REQUIRE(expected_residual(A, sy, s0) ==
              Catch::Approx(want).epsilon(1e-10));
    }
  }
  SECTION("concentrated-decoder limit approaches m sigma_y^2") {
    RngStream rng(11, "residual-limit");
    for (int trial = 0; trial < 10; ++trial) {
      Matrix A(4, 4);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) A(i, j) = rng.normal();
      A += 2.0 * Matrix::Identity(4, 4);  // keep it well conditioned
      const double sy = 0.2;
      const double ratio =
          expected_residual(A, sy, 1e-3 * sy) / (4.0 * sy * sy);
      REQUIRE(ratio > 0.99);
      REQUIRE(ratio < 1.01);
    }
  }
  SECTION("monotone decreasing in sigma_0 in the concentrated regime") {
    RngStream rng(13, "residual-monotone");
    Matrix A(3, 4);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) A(i, j) = rng.normal();
    const double sy = 0.5;
    const double s_max = A.jacobiSvd().singularValues()[0];
    double prev = expected_residual(A, sy, 1e-6);
    for (double s0 = 0.05 * sy / s_max; s0 <= 0.5 * sy / s_max;
         s0 += 0.05 * sy / s_max) {
      const double cur = expected_residual(A, sy, s0);
      REQUIRE(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("sigma hat estimator", "[oracle]") {
  SECTION("definition at a constructed residual") {
    const auto op = ForwardOperator::identity(4);
    const double sigma = 0.37;
    ForwardProblem pb{op, NoiseModel::gaussian(sigma),
                      Vector::Constant(4, sigma), std::nullopt, 0};
    // x0 = 0 gives ||r||^2 = 4 sigma^2
    REQUIRE(sigma_hat(pb, Vector::Zero(4)) == Catch::Approx(sigma));
  }
  SECTION("exact fit gives zero") {
    const auto op = ForwardOperator::avgpool(4, 2);
    const Vector x = vec({0.1, 0.2, 0.3, 0.4});
    const auto pb = synthesize_measurement(op, NoiseModel::gaussian(0.0), x, 3);
    REQUIRE(sigma_hat(pb, x) == 0.0);
  }
  SECTION("chi concentration over 1000 seeds") {
    const auto op = ForwardOperator::identity(4096);
    const Vector x = Vector::Zero(4096);
    const double sigma = 0.2;
    for (int seed = 0; seed < 1000; ++seed) {
      const auto pb = synthesize_measurement(
          op, NoiseModel::gaussian(sigma), x,
          static_cast<std::uint64_t>(seed));
      const double est = sigma_hat(pb, x);
      REQUIRE(est > 0.9 * sigma);
      REQUIRE(est < 1.1 * sigma);
    }
  }
}

TEST_CASE("chain metrics", "[oracle]") {
  SECTION("exact samples give zero mse and infinite psnr") {
    ChainOutput out;
    const Vector xt = vec({0.5, -0.5});
    for (int i = 0; i < 10; ++i) {
      out.samples_xT.push_back(xt);
      out.samples_x0.push_back(xt);
    }
    const auto rep = chain_metrics(out, nullptr, &xt);
    REQUIRE(rep.mse == 0.0);
    REQUIRE(std::isinf(rep.psnr));
  }
  SECTION("constant chain reports the ess sentinel") {
    ChainOutput out;
    for (int i = 0; i < 50; ++i) {
      out.samples_xT.push_back(vec({1.0}));
      out.samples_x0.push_back(vec({1.0}));
    }
    REQUIRE(chain_metrics(out).ess == 1.0);
  }
  SECTION("ks test is calibrated on exact oracle draws") {
    Matrix A(1, 1);
    A << 1.0;
    const auto oracle =
        conjugate_posterior(standard_normal_prior(1), A, 1.0, vec({2.0}));
    int passed = 0;
    for (int rep = 0; rep < 100; ++rep) {
      RngStream rng(static_cast<std::uint64_t>(rep), "ks-calibration");
      ChainOutput out;
      for (int i = 0; i < 500; ++i) {
        const Vector s = vec({1.0 + std::sqrt(0.5) * rng.normal()});
        out.samples_xT.push_back(s);
        out.samples_x0.push_back(s);
      }
      const auto m = chain_metrics(out, &oracle);
      if (m.ks_pvalue > 0.01) ++passed;
    }
    REQUIRE(passed >= 95);
  }
}

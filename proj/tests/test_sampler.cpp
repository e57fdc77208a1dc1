#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "nhmc/oracle.hpp"
#include "nhmc/rng.hpp"
#include "nhmc/sampler.hpp"
#include "support/test_util.hpp"

using namespace nhmc;

namespace {

Vector vec(std::initializer_list<double> vals) {
  Vector v(static_cast<int>(vals.size()));
  int i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

// U(x) = ||x||^2 / (2 tau2), a Gaussian target with variance tau2
struct QuadraticTarget {
  double tau2 = 1.0;
  PotentialEval eval(const Vector& x) const {
    PotentialEval e;
    e.value = 0.5 * x.squaredNorm() / tau2;
    e.grad = x / tau2;
    e.lik_prefactor = 1.0;
    return e;
  }
};

// steep quartic; diverges under a large step size
struct QuarticTarget {
  PotentialEval eval(const Vector& x) const {
    PotentialEval e;
    e.value = 25.0 * std::pow(x.squaredNorm(), 2);
    e.grad = 100.0 * x.squaredNorm() * x;
    e.lik_prefactor = 1.0;
    return e;
  }
};

// conjugate 1-D problem: identity decoder/operator, sigma_y = 1, y = 2;
// posterior over x_T is N(1, 1/2)
Potential conjugate_potential() {
  const auto op = ForwardOperator::identity(1);
  ForwardProblem pb{op, NoiseModel::gaussian(1.0), vec({2.0}), std::nullopt,
                    0};
  return Potential::known_sigma(pb, DdimDecoder::identity(1), 1.0);
}

// smooth non-quadratic target: 2-step decoder over a 1-D bimodal prior
Potential bimodal_decoder_potential(double sigma_y = 0.5, double y0 = 0.3) {
  const GmmPrior prior =
      make_gmm({0.5, 0.5}, {vec({-0.8}), vec({0.8})}, {0.16, 0.16});
  const auto sched = build_linear_beta_schedule(1000);
  const DdimDecoder dec(sched, select_timesteps(sched, 2, 750), prior);
  const auto op = ForwardOperator::identity(1);
  ForwardProblem pb{op, NoiseModel::gaussian(sigma_y), vec({y0}),
                    std::nullopt, 0};
  return Potential::known_sigma(pb, dec, sigma_y);
}

HmcConfig basic_config(int iterations, double step, int L = 20) {
  HmcConfig cfg;
  cfg.iterations = iterations;
  cfg.leapfrog_steps = L;
  cfg.step_size = step;
  cfg.mode = PotentialMode::known_sigma;
  cfg.sigma_target = 1.0;
  return cfg;
}

}  // namespace

TEST_CASE("leapfrog hand-executed quadratic step", "[sampler]") {
  // U = x^2/2: half kick p = -0.05, drift x = 1 + 0.1 (-0.05) = 0.995,
  // half kick p = -0.05 - 0.05 * 0.995 = -0.09975
  QuadraticTarget target;
  const auto res = leapfrog(target, vec({1.0}), vec({0.0}), 0.1, 1);
  REQUIRE(res.x[0] == Catch::Approx(0.995).margin(1e-15));
  REQUIRE(res.p[0] == Catch::Approx(-0.09975).margin(1e-15));
  REQUIRE(res.grad_evals == 2);
}

TEST_CASE("leapfrog continuity as the step vanishes", "[sampler]") {
  QuadraticTarget target;
  const Vector x = vec({0.7, -0.3});
  const Vector p = vec({1.1, 0.4});
  const auto res = leapfrog(target, x, p, 1e-8, 1);
  REQUIRE((res.x - x).norm() < 1e-7 * p.norm());
}

TEST_CASE("leapfrog reversibility", "[sampler]") {
  const auto pot = bimodal_decoder_potential();
  RngStream rng(3, "reversibility");
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = rng.normal_vector(1);
    const Vector p = rng.normal_vector(1);
    const auto fwd = leapfrog(pot, x, p, 0.05, 15);
    const auto back = leapfrog(pot, fwd.x, Vector(-fwd.p), 0.05, 15);
    REQUIRE(test::vec_rel_err(back.x, x, 1e-6) < 1e-10);
    REQUIRE(test::vec_rel_err(Vector(-back.p), p, 1e-6) < 1e-10);
  }
}

TEST_CASE("leapfrog volume preservation", "[sampler]") {
  // numeric Jacobian of one step over (x, p) phase space, n <= 3
  const auto pot = bimodal_decoder_potential();
  auto step = [&](const Vector& z) {
    const auto res = leapfrog(pot, z.head(1), z.tail(1), 0.11, 1);
    Vector out(2);
    out << res.x[0], res.p[0];
    return out;
  };
  RngStream rng(5, "volume");
  for (int trial = 0; trial < 10; ++trial) {
    Vector z(2);
    z << rng.normal(), rng.normal();
    const Matrix J = test::fd_jacobian(step, z, 1e-5);
    REQUIRE(J.determinant() == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("leapfrog energy error is second order", "[sampler]") {
  const auto pot = bimodal_decoder_potential();
  RngStream rng(7, "energy-scaling");
  std::vector<double> ratios;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = rng.normal_vector(1);
    const Vector p = rng.normal_vector(1);
    const double H0 = pot.eval(x).value + 0.5 * p.squaredNorm();
    const auto coarse = leapfrog(pot, x, p, 0.2, 10);
    const auto fine = leapfrog(pot, x, p, 0.1, 20);  // same total time
    const double dh_coarse =
        std::abs(coarse.final_eval.value + 0.5 * coarse.p.squaredNorm() - H0);
    const double dh_fine =
        std::abs(fine.final_eval.value + 0.5 * fine.p.squaredNorm() - H0);
    ratios.push_back(dh_coarse / std::max(dh_fine, 1e-300));
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[ratios.size() / 2];
  REQUIRE(median > 3.0);
  REQUIRE(median < 5.0);
}

TEST_CASE("hmc iteration acceptance behavior", "[sampler]") {
  SECTION("tiny step size accepts immediately") {
    QuadraticTarget target;
    ChainState state;
    state.x = vec({0.8});
    state.delta = 1e-9;
    state.cached = target.eval(state.x);
    RngStream rng(9, "tiny-step");
    const auto cfg = basic_config(1, 1e-9, 5);
    const auto rec = hmc_iteration(state, target, cfg, rng);
    REQUIRE(rec.accepted);
    REQUIRE(rec.retries == 0);
    REQUIRE(std::abs(rec.dH) < 1e-12);
  }
  SECTION("divergent trajectory rejects and shrinks the step size") {
    QuarticTarget target;
    ChainState state;
    state.x = vec({3.0});
    state.delta = 10.0;
    state.cached = target.eval(state.x);
    RngStream rng(11, "divergent");
    auto cfg = basic_config(1, 10.0, 10);
    cfg.decay = 0.5;
    cfg.max_retries = 100;
    const auto rec = hmc_iteration(state, target, cfg, rng);
    REQUIRE(rec.retries > 0);
    REQUIRE_FALSE(rec.accepted);
    REQUIRE(state.delta < 10.0);
    REQUIRE(state.delta == Catch::Approx(10.0 * std::pow(0.5, rec.retries)));
  }
  SECTION("retry bound aborts with the retry trace") {
    QuarticTarget target;
    ChainState state;
    state.x = vec({5.0});
    state.delta = 50.0;
    state.cached = target.eval(state.x);
    RngStream rng(13, "abort");
    auto cfg = basic_config(1, 50.0, 10);
    cfg.max_retries = 3;
    cfg.decay = 0.999;  // decays too slowly to recover in 3 tries
    try {
      hmc_iteration(state, target, cfg, rng);
      FAIL("expected ChainAbortError");
    } catch (const ChainAbortError& e) {
      REQUIRE(e.retry_deltas().size() == 4);  // initial try + 3 retries
    }
  }
}

TEST_CASE("hmc matches the conjugate gaussian posterior", "[sampler]") {
  // keep L * delta below the first resonance of the harmonic target so the
  // monotone step-size decay cannot park the chain there
  const auto pot = conjugate_potential();
  auto cfg = basic_config(2200, 0.2, 10);
  cfg.burn_in = 200;
  PotentialFactory factory = [&](int) { return pot; };
  RngStream rng(17, "conjugate-chain");
  const auto out = run_chain(cfg, factory, rng);
  REQUIRE(out.samples_xT.size() == 2000);

  std::vector<double> xs;
  for (const auto& s : out.samples_xT) xs.push_back(s[0]);
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= xs.size();
  double var = 0.0;
  for (double v : xs) var += (v - mean) * (v - mean);
  var /= (xs.size() - 1);

  const double ess = effective_sample_size(xs);
  const double se = std::sqrt(var / ess);
  REQUIRE(std::abs(mean - 1.0) < 3.0 * se);
  REQUIRE(var == Catch::Approx(0.5).epsilon(0.10));
}

TEST_CASE("run_chain basics", "[sampler]") {
  SECTION("zero iterations keeps only the initial diagnostics") {
    const auto pot = conjugate_potential();
    auto cfg = basic_config(0, 0.1);
    PotentialFactory factory = [&](int) { return pot; };
    RngStream rng(19, "empty-chain");
    const auto out = run_chain(cfg, factory, rng);
    REQUIRE(out.samples_xT.empty());
    REQUIRE(out.records.empty());
    REQUIRE(std::isfinite(out.initial_potential));
    REQUIRE(out.x_init.size() == 1);
  }
  SECTION("step size never increases within a run") {
    const auto pot = bimodal_decoder_potential(0.1, 0.9);
    auto cfg = basic_config(200, 0.6);
    cfg.sigma_target = 0.1;
    PotentialFactory factory = [&](int) { return pot; };
    RngStream rng(23, "monotone-delta");
    const auto out = run_chain(cfg, factory, rng);
    for (std::size_t i = 1; i < out.records.size(); ++i)
      REQUIRE(out.records[i].delta <= out.records[i - 1].delta);
  }
  SECTION("seed determinism is bitwise") {
    const auto pot = bimodal_decoder_potential();
    auto cfg = basic_config(50, 0.2);
    cfg.sigma_target = 0.5;
    PotentialFactory factory = [&](int) { return pot; };
    RngStream rng_a(29, "det-chain");
    RngStream rng_b(29, "det-chain");
    const auto a = run_chain(cfg, factory, rng_a);
    const auto b = run_chain(cfg, factory, rng_b);
    REQUIRE(a.samples_xT.size() == b.samples_xT.size());
    for (std::size_t i = 0; i < a.samples_xT.size(); ++i)
      REQUIRE(a.samples_xT[i] == b.samples_xT[i]);
    RngStream rng_c(30, "det-chain");
    const auto c = run_chain(cfg, factory, rng_c);
    REQUIRE(a.samples_xT.front() != c.samples_xT.front());
  }
}

TEST_CASE("annealed warmup reaches the sign-blind ground-truth basin",
          "[sampler]") {
  // 1-D phase-retrieval analogue: |DFT| of a scalar is |x|, so the
  // likelihood cannot distinguish the prior modes by sign; the ground
  // truth sits in the +1 mode, the -0.6 mode explains |y| poorly.
  const GmmPrior prior =
      make_gmm({0.5, 0.5}, {vec({-0.6}), vec({1.0})}, {0.04, 0.04});
  const auto sched = build_linear_beta_schedule(1000);
  const DdimDecoder dec(sched, select_timesteps(sched, 2, 750), prior);
  const auto op = ForwardOperator::dft_magnitude(1);
  const Vector x_true = vec({1.0});
  const double boundary = 0.2;  // nearest-mode split of decoded values

  HmcConfig cfg;
  cfg.iterations = 80;
  cfg.leapfrog_steps = 20;
  cfg.step_size = 0.2;
  cfg.decay = 0.95;
  cfg.mode = PotentialMode::jeffreys;
  cfg.sigma_schedule = make_sqrt_anneal(1.0, 20.0, 50);

  int hmc_hits = 0;
  int map_hits = 0;
  const int n_chains = 50;
  for (int i = 0; i < n_chains; ++i) {
    const auto problem = synthesize_measurement(
        op, NoiseModel::gaussian(0.05), x_true, 1000 + i);
    const auto factory = make_annealed_potential_factory(problem, dec, cfg);
    RngStream init_rng(i, "basin-init");
    const Vector x0 = init_rng.normal_vector(1);

    RngStream rng(i, "basin-chain");
    const auto out = run_chain(cfg, factory, rng, x0);
    int votes = 0;
    for (const auto& s : out.samples_x0) votes += s[0] > boundary ? 1 : -1;
    hmc_hits += votes > 0 ? 1 : 0;

    const auto map_pot = Potential::known_sigma(problem, dec, 0.05);
    const auto res = map_descent(map_pot, x0, 0.005, 1680);
    map_hits += dec.decode(res.x)[0] > boundary ? 1 : 0;
  }
  REQUIRE(hmc_hits >= 40);  // 80% of 50
  REQUIRE(map_hits < hmc_hits);
}

TEST_CASE("ula step", "[sampler]") {
  QuadraticTarget target;
  SECTION("zero step size is the identity") {
    RngStream rng(31, "ula-zero");
    const Vector x = vec({0.4, -0.2});
    REQUIRE(ula_step(target, x, 0.0, rng) == x);
  }
  SECTION("stationary variance matches the exact discretization") {
    // x' = (1 - delta) x + sqrt(2 delta) z has stationary variance
    // 2 delta / (1 - (1 - delta)^2) = 1 / (1 - delta/2)
    const double delta = 0.05;
    const double want = 1.0 / (1.0 - delta / 2.0);
    RngStream rng(37, "ula-var");
    Vector x = vec({0.0});
    double acc = 0.0;
    int count = 0;
    const int burn = 2000, steps = 150000;
    for (int i = 0; i < steps; ++i) {
      x = ula_step(target, x, delta, rng);
      if (i >= burn) {
        acc += x[0] * x[0];
        ++count;
      }
    }
    const double var = acc / count;
    REQUIRE(var == Catch::Approx(want).epsilon(0.10));
  }
  SECTION("large steps inflate the variance beyond the target") {
    const double delta = 1.0;  // exact stationary variance 2.0
    RngStream rng(41, "ula-inflate");
    Vector x = vec({0.0});
    double acc = 0.0;
    int count = 0;
    for (int i = 0; i < 60000; ++i) {
      x = ula_step(target, x, delta, rng);
      if (i >= 1000) {
        acc += x[0] * x[0];
        ++count;
      }
    }
    const double var = acc / count;
    REQUIRE(var > 1.5);
    REQUIRE(var == Catch::Approx(2.0).epsilon(0.15));
  }
}

TEST_CASE("mala step", "[sampler]") {
  QuadraticTarget target;
  SECTION("proposal equal to the current point is always accepted") {
    const Vector x = vec({0.7});
    const auto e = target.eval(x);
    REQUIRE(mala_log_accept(e, x, e, x, 0.3) == 0.0);
  }
  SECTION("moments match the gaussian target") {
    RngStream rng(43, "mala-moments");
    Vector x = vec({0.0});
    std::vector<double> xs;
    for (int i = 0; i < 12000; ++i) {
      auto [nx, ok] = mala_step(target, x, 0.8, rng);
      x = nx;
      if (i >= 2000) xs.push_back(x[0]);
    }
    double mean = 0.0;
    for (double v : xs) mean += v;
    mean /= xs.size();
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    var /= (xs.size() - 1);
    const double se = std::sqrt(var / effective_sample_size(xs));
    REQUIRE(std::abs(mean - 0.0) < 3.0 * se);
    REQUIRE(var == Catch::Approx(1.0).epsilon(0.10));
  }
  SECTION("acceptance rate decreases with the step size") {
    std::vector<double> rates;
    for (double delta : {0.2, 0.6, 1.2, 1.8}) {
      double accepted = 0.0;
      int total = 0;
      for (int seed = 0; seed < 10; ++seed) {
        RngStream rng(seed, "mala-rate");
        Vector x = vec({0.0});
        for (int i = 0; i < 1000; ++i) {
          auto [nx, ok] = mala_step(target, x, delta, rng);
          x = nx;
          accepted += ok ? 1.0 : 0.0;
          ++total;
        }
      }
      rates.push_back(accepted / total);
    }
    for (std::size_t i = 1; i < rates.size(); ++i)
      REQUIRE(rates[i] < rates[i - 1]);
  }
}

TEST_CASE("map descent", "[sampler]") {
  SECTION("converges on a quadratic bowl") {
    QuadraticTarget target;
    const auto res = map_descent(target, vec({4.0, -3.0}), 0.2, 200);
    REQUIRE(res.x.norm() < 1e-6);
    REQUIRE(res.loss_trace.front() > res.loss_trace.back());
  }
  SECTION("zero learning rate returns the start point") {
    QuadraticTarget target;
    const Vector x0 = vec({1.5});
    REQUIRE(map_descent(target, x0, 0.0, 50).x == x0);
  }
  SECTION("stays in the initialization basin of a bimodal potential") {
    const auto pot = bimodal_decoder_potential(0.05, 0.0);
    // both modes explain y equally; descent cannot cross the barrier
    const auto neg = map_descent(pot, vec({-1.5}), 0.01, 2000);
    const auto pos = map_descent(pot, vec({1.5}), 0.01, 2000);
    REQUIRE(neg.x[0] < 0.0);
    REQUIRE(pos.x[0] > 0.0);
  }
}

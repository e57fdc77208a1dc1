#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nhmc/artifacts.hpp"
#include "nhmc/config.hpp"
#include "nhmc/core.hpp"
#include "nhmc/oracle.hpp"
#include "nhmc/sampler.hpp"

namespace nhmc {

// Everything instantiated from an ExperimentConfig.
struct ExperimentSetup {
  GmmPrior prior;
  DdimDecoder decoder;
  ForwardOperator op;
  NoiseModel noise;
  ForwardProblem problem;
  std::optional<Vector> x_true;
};

inline ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  GmmPrior prior = build_prior(cfg.prior);
  DdimDecoder decoder = build_decoder(cfg, prior);
  ForwardOperator op = build_operator(cfg.op, prior.dim);
  NoiseModel noise = build_noise(cfg.noise);

  std::optional<Vector> x_true;
  if (cfg.x_true) {
    Vector v(static_cast<int>(cfg.x_true->size()));
    for (std::size_t i = 0; i < cfg.x_true->size(); ++i)
      v[static_cast<int>(i)] = (*cfg.x_true)[i];
    require(static_cast<int>(v.size()) == prior.dim,
            "x_true: length must match the prior dimension");
    x_true = std::move(v);
  }

  ForwardProblem problem{op, noise, Vector(), x_true, cfg.seed};
  if (cfg.measurement_file) {
    std::ifstream f(*cfg.measurement_file);
    if (!f)
      throw ConfigError("measurement.file: cannot open '" +
                        *cfg.measurement_file + "'");
    Json j = Json::parse(f, nullptr, true, true);
    problem.y = vector_from_json(j.at("y"));
    require(static_cast<int>(problem.y.size()) == op.output_dim(),
            "measurement.file: measurement length does not match operator");
    if (!x_true && j.contains("x_true") && !j.at("x_true").is_null())
      x_true = vector_from_json(j.at("x_true"));
    problem.x_true = x_true;
  } else {
    // default ground truth: the decoder image of the origin, the center of
    // the pushforward of N(0, I)
    if (!x_true) x_true = decoder.decode(Vector::Zero(prior.dim));
    problem = synthesize_measurement(op, noise, *x_true, cfg.seed);
  }
  return ExperimentSetup{std::move(prior), std::move(decoder), std::move(op),
                         std::move(noise), std::move(problem),
                         std::move(x_true)};
}

// --- baseline chains ---------------------------------------------------

struct LangevinConfig {
  double step_size = 0.01;
  int iterations = 2000;
  int burn_in = 0;
  SigmaAnnealSchedule sigma_schedule{};
  PotentialMode mode = PotentialMode::jeffreys;
  std::optional<double> sigma_target{};
};

// ULA / MALA loop with the same warmup annealing semantics as the HMC
// samplers; one record per step.
inline ChainOutput run_langevin_chain(bool adjusted, const LangevinConfig& cfg,
                                      const PotentialFactory& factory,
                                      RngStream& rng,
                                      std::optional<Vector> x_init =
                                          std::nullopt) {
  require(cfg.step_size > 0.0, "langevin step size must be positive");
  ChainOutput out;
  out.warmup = cfg.sigma_schedule.warmup_iters + cfg.burn_in;
  Potential pot = factory(0);
  const int n = pot.dim();
  Vector x = x_init ? *x_init : rng.normal_vector(n);
  PotentialEval e = pot.eval(x);
  out.x_init = x;
  out.initial_potential = e.value;
  out.initial_sigma_hat = detail::sigma_hat_or_nan(pot, e);
  for (int k = 0; k < cfg.iterations; ++k) {
    if (k > 0) {
      pot = factory(k);
      e = pot.reweight(x, e);
    }
    IterationRecord rec;
    rec.k = k;
    rec.delta = cfg.step_size;
    if (adjusted) {
      const Vector x2 = x - cfg.step_size * e.grad +
                        std::sqrt(2.0 * cfg.step_size) * rng.normal_vector(n);
      double log_acc = -std::numeric_limits<double>::infinity();
      PotentialEval e2;
      bool ok = false;
      try {
        e2 = pot.eval(x2);
        log_acc = mala_log_accept(e, x, e2, x2, cfg.step_size);
        ok = true;
      } catch (const DivergenceError&) {
      }
      const double u = rng.uniform();
      if (ok && u < std::exp(log_acc)) {
        x = x2;
        e = std::move(e2);
        rec.accepted = true;
      } else {
        rec.retries = 1;
      }
      rec.grad_evals = 1;
    } else {
      const Vector x2 = x - cfg.step_size * e.grad +
                        std::sqrt(2.0 * cfg.step_size) * rng.normal_vector(n);
      x = x2;
      e = pot.eval(x);
      rec.accepted = true;
      rec.grad_evals = 1;
    }
    rec.dH = 0.0;
    rec.sigma_hat = detail::sigma_hat_or_nan(pot, e);
    rec.potential = e.value;
    const auto sigma =
        sigma_anneal_value(cfg.sigma_schedule, k, cfg.sigma_target);
    rec.sigma_used =
        sigma ? *sigma : std::numeric_limits<double>::quiet_NaN();
    out.records.push_back(rec);
    if (k >= out.warmup) {
      out.samples_xT.push_back(x);
      out.samples_x0.push_back(e.x0.size() ? e.x0 : x);
    }
  }
  return out;
}

// Gradient-descent baseline wrapped as a one-sample chain so it flows
// through the same reporting path.
inline ChainOutput run_map_chain(const Potential& pot, double learning_rate,
                                 int iterations, RngStream& rng,
                                 std::optional<Vector> x_init = std::nullopt) {
  ChainOutput out;
  const int n = pot.dim();
  Vector x0 = x_init ? *x_init : rng.normal_vector(n);
  out.x_init = x0;
  auto res = map_descent(pot, x0, learning_rate, iterations);
  out.initial_potential = res.loss_trace.front();
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
    IterationRecord rec;
    rec.k = static_cast<int>(i);
    rec.accepted = true;
    rec.delta = learning_rate;
    rec.potential = res.loss_trace[i];
    out.records.push_back(rec);
  }
  const PotentialEval fin = pot.eval(res.x);
  out.records.back().sigma_hat = detail::sigma_hat_or_nan(pot, fin);
  out.initial_sigma_hat = std::numeric_limits<double>::quiet_NaN();
  out.samples_xT.push_back(res.x);
  out.samples_x0.push_back(fin.x0.size() ? fin.x0 : res.x);
  out.warmup = static_cast<int>(res.loss_trace.size()) - 1;
  return out;
}

// --- method dispatch ----------------------------------------------------

inline ChainOutput run_method_chain(const std::string& method,
                                    const ExperimentConfig& cfg,
                                    const ExperimentSetup& setup,
                                    RngStream& rng,
                                    std::optional<Vector> x_init =
                                        std::nullopt) {
  if (method == "nhmc" || method == "nanhmc") {
    ExperimentConfig view = cfg;
    view.sampler.method = method;
    const HmcConfig hmc = build_hmc_config(view);
    const auto factory =
        make_annealed_potential_factory(setup.problem, setup.decoder, hmc);
    return run_chain(hmc, factory, rng, std::move(x_init));
  }
  if (method == "ula" || method == "mala") {
    const BaselineSpec& b =
        method == "ula" ? cfg.sampler.ula : cfg.sampler.mala;
    LangevinConfig lc;
    lc.step_size = b.step_size;
    lc.iterations = b.iterations;
    lc.burn_in = cfg.sampler.burn_in;
    lc.sigma_schedule = cfg.sampler.anneal;
    lc.mode = PotentialMode::jeffreys;
    HmcConfig proxy;
    proxy.sigma_schedule = lc.sigma_schedule;
    proxy.mode = lc.mode;
    proxy.sigma_target = lc.sigma_target;
    const auto factory =
        make_annealed_potential_factory(setup.problem, setup.decoder, proxy);
    return run_langevin_chain(method == "mala", lc, factory, rng,
                              std::move(x_init));
  }
  if (method == "map") {
    const Potential pot = Potential::known_sigma(
        setup.problem, setup.decoder, cfg.sampler.map.sigma_y);
    return run_map_chain(pot, cfg.sampler.map.learning_rate,
                         cfg.sampler.map.iterations, rng, std::move(x_init));
  }
  throw ConfigError("sampler.method: unknown value '" + method + "'");
}

// Chains run concurrently on independent sub-streams; outputs are joined
// in chain order so artifacts do not depend on scheduling.
inline std::vector<ChainOutput> run_all_chains(const ExperimentConfig& cfg,
                                               const ExperimentSetup& setup,
                                               const std::string& method) {
  std::vector<std::future<ChainOutput>> futures;
  futures.reserve(static_cast<std::size_t>(cfg.chains));
  for (int i = 0; i < cfg.chains; ++i) {
    futures.push_back(std::async(std::launch::async, [&, i] {
      RngStream rng(cfg.seed, "chain-" + std::to_string(i) + "/" + method);
      RngStream init_rng(cfg.seed, "chain-" + std::to_string(i) + "/init");
      const Vector x0 = init_rng.normal_vector(setup.prior.dim);
      return run_method_chain(method, cfg, setup, rng, x0);
    }));
  }
  std::vector<ChainOutput> outs;
  outs.reserve(futures.size());
  for (auto& f : futures) outs.push_back(f.get());
  return outs;
}

// --- artifact emission ---------------------------------------------------

inline Json metrics_to_json(const MetricsReport& r) {
  Json j;
  j["n_samples"] = r.n_samples;
  j["acceptance_rate"] = r.acceptance_rate;
  j["mean_retries"] = r.mean_retries;
  j["mean_xT"] = r.mean_xT.size() ? vector_to_json(r.mean_xT) : Json(nullptr);
  j["mean_x0"] = r.mean_x0.size() ? vector_to_json(r.mean_x0) : Json(nullptr);
  j["mse"] = r.mse;
  j["psnr"] = r.psnr;  // serialized as null when infinite (exact fit)
  j["ess"] = r.ess;
  j["ks_stat"] = r.ks_stat;
  j["ks_pvalue"] = r.ks_pvalue;
  j["sigma_hat_final"] = r.sigma_hat_final;
  j["sigma_hat_post_mean"] = r.sigma_hat_post_mean;
  return j;
}

inline void write_samples_csv(ArtifactWriter& w, const std::string& name,
                              const std::vector<ChainOutput>& outs) {
  std::vector<std::string> header{"chain", "k"};
  int n = 0, n0 = 0;
  for (const auto& o : outs)
    if (!o.samples_xT.empty()) {
      n = static_cast<int>(o.samples_xT.front().size());
      n0 = static_cast<int>(o.samples_x0.front().size());
      break;
    }
  for (int j = 0; j < n; ++j) header.push_back("xT_" + std::to_string(j));
  for (int j = 0; j < n0; ++j) header.push_back("x0_" + std::to_string(j));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t c = 0; c < outs.size(); ++c) {
    const auto& o = outs[c];
    for (std::size_t i = 0; i < o.samples_xT.size(); ++i) {
      std::vector<std::string> row{std::to_string(c),
                                   std::to_string(o.warmup +
                                                  static_cast<int>(i))};
      for (int j = 0; j < n; ++j)
        row.push_back(format_double(o.samples_xT[i][j]));
      for (int j = 0; j < n0; ++j)
        row.push_back(format_double(o.samples_x0[i][j]));
      rows.push_back(std::move(row));
    }
  }
  w.write_csv(name, header, rows);
}

inline void write_trace_jsonl(ArtifactWriter& w, const std::string& name,
                              const std::vector<ChainOutput>& outs) {
  std::string body;
  for (std::size_t c = 0; c < outs.size(); ++c) {
    for (const auto& r : outs[c].records) {
      Json j;
      j["chain"] = c;
      j["k"] = r.k;
      j["accepted"] = r.accepted;
      j["retries"] = r.retries;
      j["delta"] = r.delta;
      j["dH"] = r.dH;
      j["sigma_hat"] = r.sigma_hat;
      j["potential"] = r.potential;
      j["sigma_used"] = r.sigma_used;
      j["grad_evals"] = r.grad_evals;
      body += j.dump();
      body += '\n';
    }
  }
  w.write_text(name, body);
}

inline void write_measurement_json(ArtifactWriter& w,
                                   const ExperimentSetup& setup,
                                   const ExperimentConfig& cfg) {
  Json j;
  j["y"] = vector_to_json(setup.problem.y);
  j["m"] = setup.op.output_dim();
  j["n"] = setup.op.input_dim();
  j["operator"] = setup.op.kind_name();
  j["noise"] = setup.noise.kind_name();
  if (!cfg.op.shape.empty()) j["shape"] = cfg.op.shape;
  j["seed"] = setup.problem.seed;
  j["x_true"] =
      setup.x_true ? vector_to_json(*setup.x_true) : Json(nullptr);
  w.write_json("measurement.json", j);
}

// Conjugate noise-space oracle when the posterior is exactly Gaussian-
// mixture: linear operator, Gaussian noise, and an identity or affine
// (single-component prior) decoder.
inline std::optional<PosteriorOracle> try_conjugate_oracle(
    const ExperimentSetup& setup, double sigma_y) {
  if (!setup.op.is_linear() ||
      setup.noise.kind != NoiseModel::Kind::gaussian || sigma_y <= 0.0)
    return std::nullopt;
  const int n = setup.prior.dim;
  const Matrix A = setup.op.matrix();
  if (setup.decoder.is_identity())
    return conjugate_posterior(standard_normal_prior(n), A, sigma_y,
                               setup.problem.y);
  if (setup.prior.components() == 1) {
    // decode is affine: D(x) = S x + t
    const Vector t = setup.decoder.decode(Vector::Zero(n));
    Matrix S(n, n);
    Vector e = Vector::Zero(n);
    for (int j = 0; j < n; ++j) {
      e[j] = 1.0;
      S.col(j) = setup.decoder.decode(e) - t;
      e[j] = 0.0;
    }
    return conjugate_posterior(standard_normal_prior(n), A * S, sigma_y,
                               setup.problem.y - A * t);
  }
  return std::nullopt;
}

struct RunResult {
  std::vector<ChainOutput> chains;
  std::vector<MetricsReport> metrics;
  Json metrics_json;
  std::string out_dir;
  bool aborted = false;
  std::string abort_message;
};

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  const ExperimentSetup setup = build_setup(cfg);
  ArtifactWriter w(cfg.out_dir);
  RunResult res;
  res.out_dir = cfg.out_dir;
  write_measurement_json(w, setup, cfg);
  try {
    res.chains = run_all_chains(cfg, setup, cfg.sampler.method);
  } catch (const ChainAbortError& e) {
    res.aborted = true;
    res.abort_message = e.what();
    Json diag;
    diag["error"] = e.what();
    diag["retry_deltas"] = e.retry_deltas();
    w.write_json("abort.json", diag);
    w.write_manifest(cfg, Json{{"status", "aborted"}});
    return res;
  }

  std::optional<PosteriorOracle> oracle;
  if (setup.prior.dim <= 2) {
    const double sigma_for_oracle =
        cfg.sampler.sigma_y
            ? *cfg.sampler.sigma_y
            : (setup.noise.kind == NoiseModel::Kind::gaussian
                   ? setup.noise.sigma
                   : 0.0);
    if (cfg.sampler.method == "nhmc" || cfg.sampler.method == "nanhmc")
      oracle = try_conjugate_oracle(setup, sigma_for_oracle);
  }

  Json chain_metrics_json = Json::array();
  double mse_acc = 0.0, acc_acc = 0.0;
  int mse_cnt = 0, acc_cnt = 0;
  for (const auto& o : res.chains) {
    const MetricsReport rep =
        chain_metrics(o, oracle ? &*oracle : nullptr,
                      setup.x_true ? &*setup.x_true : nullptr);
    res.metrics.push_back(rep);
    chain_metrics_json.push_back(metrics_to_json(rep));
    if (!std::isnan(rep.mse)) {
      mse_acc += rep.mse;
      ++mse_cnt;
    }
    if (!std::isnan(rep.acceptance_rate)) {
      acc_acc += rep.acceptance_rate;
      ++acc_cnt;
    }
  }
  Json m;
  m["chains"] = chain_metrics_json;
  Json agg;
  agg["mean_mse"] =
      mse_cnt ? Json(mse_acc / mse_cnt) : Json(nullptr);
  agg["mean_acceptance_rate"] =
      acc_cnt ? Json(acc_acc / acc_cnt) : Json(nullptr);
  m["aggregate"] = agg;
  res.metrics_json = m;

  write_samples_csv(w, "samples.csv", res.chains);
  write_trace_jsonl(w, "trace.jsonl", res.chains);
  w.write_json("metrics.json", m);
  w.write_manifest(cfg, Json{{"status", "ok"}});
  return res;
}

// --- oracle command -------------------------------------------------------

inline Json run_oracle(const ExperimentConfig& cfg) {
  const ExperimentSetup setup = build_setup(cfg);
  ArtifactWriter w(cfg.out_dir);
  const int dim = setup.prior.dim;
  Json report;

  const double sigma_y = cfg.sampler.sigma_y
                             ? *cfg.sampler.sigma_y
                             : (setup.noise.kind == NoiseModel::Kind::gaussian
                                    ? setup.noise.sigma
                                    : 0.0);

  std::optional<PosteriorOracle> conj;
  if (setup.op.is_linear()) conj = try_conjugate_oracle(setup, sigma_y);
  if (conj) {
    Json cj;
    cj["weights"] = conj->weights;
    Json means = Json::array();
    for (const auto& mu : conj->means) means.push_back(vector_to_json(mu));
    cj["means"] = means;
    cj["mean"] = vector_to_json(conj->mean());
    const Matrix cov = conj->covariance();
    Json cov_rows = Json::array();
    for (int i = 0; i < cov.rows(); ++i) {
      Json row = Json::array();
      for (int j = 0; j < cov.cols(); ++j) row.push_back(cov(i, j));
      cov_rows.push_back(row);
    }
    cj["covariance"] = cov_rows;
    report["conjugate"] = cj;
  }
  if (setup.op.is_linear() && sigma_y > 0.0) {
    double sigma0;
    if (cfg.oracle.sigma0) {
      sigma0 = *cfg.oracle.sigma0;
    } else {
      // decoder spread around its pushforward center, estimated from the
      // image of N(0, I)
      RngStream rng(cfg.seed, "oracle-sigma0");
      const int draws = 256;
      std::vector<Vector> imgs;
      Vector mean = Vector::Zero(dim);
      for (int i = 0; i < draws; ++i) {
        imgs.push_back(setup.decoder.decode(rng.normal_vector(dim)));
        mean += imgs.back();
      }
      mean /= draws;
      double acc = 0.0;
      for (const auto& v : imgs) acc += (v - mean).squaredNorm();
      sigma0 = std::sqrt(acc / (draws * dim));
    }
    const Matrix A = setup.op.matrix();
    const double er = expected_residual(A, sigma_y, sigma0);
    report["expected_residual"] = er;
    report["expected_residual_normalized"] =
        er / (setup.op.output_dim() * sigma_y * sigma_y);
    report["sigma0"] = sigma0;
  }

  if (dim <= 2) {
    std::vector<std::pair<double, double>> bounds = cfg.oracle.bounds;
    if (bounds.empty())
      bounds.assign(static_cast<std::size_t>(dim), {-8.0, 8.0});
    const Potential pot =
        cfg.sampler.method == "nanhmc" || sigma_y <= 0.0
            ? Potential::jeffreys(setup.problem, setup.decoder)
            : Potential::known_sigma(setup.problem, setup.decoder, sigma_y);
    const PosteriorOracle grid =
        grid_posterior(pot, bounds, cfg.oracle.resolution);
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    if (dim == 1) {
      header = {"x0", "density"};
      for (std::size_t i = 0; i < grid.axes[0].size(); ++i)
        rows.push_back({format_double(grid.axes[0][i]),
                        format_double(grid.density(i, 0))});
    } else {
      header = {"x0", "x1", "density"};
      for (std::size_t i = 0; i < grid.axes[0].size(); ++i)
        for (std::size_t j = 0; j < grid.axes[1].size(); ++j)
          rows.push_back({format_double(grid.axes[0][i]),
                          format_double(grid.axes[1][j]),
                          format_double(grid.density(i, j))});
    }
    w.write_csv("oracle.csv", header, rows);
    report["grid_mean"] = vector_to_json(grid.mean());
    report["grid_mass"] = grid.grid_total_mass();
  } else if (!conj) {
    throw ConfigError(
        "oracle: grid posteriors support dim <= 2 only and no conjugate "
        "form applies");
  }

  w.write_json("oracle.json", report);
  w.write_manifest(cfg);
  return report;
}

// --- sweep command ---------------------------------------------------------

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"delta", "L", "gamma",
                                             "decoder_steps", "K"};
  return axes;
}

inline ExperimentConfig apply_axis(const ExperimentConfig& base,
                                   const std::string& axis, double value) {
  ExperimentConfig c = base;
  if (axis == "delta") {
    c.sampler.step_size = value;
  } else if (axis == "L") {
    c.sampler.leapfrog_steps = static_cast<int>(value);
  } else if (axis == "gamma") {
    c.sampler.decay = value;
  } else if (axis == "decoder_steps") {
    c.timesteps.count = static_cast<int>(value);
    c.timesteps.indices.clear();
    c.timesteps.identity = false;
  } else if (axis == "K") {
    c.sampler.iterations = static_cast<int>(value);
  } else {
    throw ConfigError("sweep axis: unknown value '" + axis + "'");
  }
  return c;
}

inline Json run_sweep(const ExperimentConfig& cfg, const std::string& axis,
                      const std::vector<double>& values) {
  require(!values.empty(), "sweep needs at least one value");
  ArtifactWriter w(cfg.out_dir);
  std::vector<std::string> header{"axis", "value", "metric", "metric_value"};
  std::vector<std::vector<std::string>> rows;
  Json runs = Json::array();
  for (double v : values) {
    ExperimentConfig sub = apply_axis(cfg, axis, v);
    sub.out_dir = cfg.out_dir + "/" + axis + "=" + format_double(v);
    const RunResult r = run_experiment(sub);
    runs.push_back(sub.out_dir);
    double mse = 0.0, acc = 0.0, sh = 0.0, ess = 0.0;
    int mse_n = 0, acc_n = 0, sh_n = 0, ess_n = 0;
    for (const auto& rep : r.metrics) {
      if (!std::isnan(rep.mse)) mse += rep.mse, ++mse_n;
      if (!std::isnan(rep.acceptance_rate))
        acc += rep.acceptance_rate, ++acc_n;
      if (!std::isnan(rep.sigma_hat_post_mean))
        sh += rep.sigma_hat_post_mean, ++sh_n;
      if (!std::isnan(rep.ess)) ess += rep.ess, ++ess_n;
    }
    auto emit = [&](const char* name, double total, int count) {
      rows.push_back({axis, format_double(v), name,
                      count ? format_double(total / count) : "nan"});
    };
    emit("mse", mse, mse_n);
    emit("acceptance_rate", acc, acc_n);
    emit("sigma_hat_post_mean", sh, sh_n);
    emit("ess", ess, ess_n);
  }
  w.write_csv("sweep.csv", header, rows);
  w.write_manifest(cfg, Json{{"sweep_axis", axis}, {"runs", runs}});
  Json out;
  out["axis"] = axis;
  out["rows"] = rows.size();
  return out;
}

// --- compare command --------------------------------------------------------

inline int nearest_component(const GmmPrior& prior, const Vector& x0) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < prior.components(); ++i) {
    const double d =
        (x0 - prior.means[static_cast<std::size_t>(i)]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// Majority basin of the decoded post-warmup samples.
inline int chain_basin(const GmmPrior& prior, const ChainOutput& out) {
  std::vector<int> votes(static_cast<std::size_t>(prior.components()), 0);
  for (const auto& x0 : out.samples_x0)
    ++votes[static_cast<std::size_t>(nearest_component(prior, x0))];
  int best = 0;
  for (int i = 1; i < prior.components(); ++i)
    if (votes[static_cast<std::size_t>(i)] >
        votes[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

struct CompareResult {
  Json summary;
  std::string out_dir;
};

inline CompareResult run_compare(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& methods) {
  require(!methods.empty(), "compare needs at least one method");
  const ExperimentSetup setup = build_setup(cfg);
  ArtifactWriter w(cfg.out_dir);
  write_measurement_json(w, setup, cfg);

  const int true_comp =
      setup.x_true ? nearest_component(setup.prior, *setup.x_true) : 0;

  std::vector<std::string> cmp_header{"method", "chain",    "success",
                                      "mse",    "final_k",  "sigma_hat_final"};
  std::vector<std::vector<std::string>> cmp_rows;
  std::vector<std::string> trace_header{"method", "chain", "k", "sigma_hat"};
  std::vector<std::vector<std::string>> trace_rows;
  std::vector<std::string> band_header{"method", "k", "p05", "p50", "p95"};
  std::vector<std::vector<std::string>> band_rows;
  std::vector<std::string> rate_header{"method", "success_rate", "mean_mse"};
  std::vector<std::vector<std::string>> rate_rows;
  Json summary;

  for (const auto& method : methods) {
    // paired seeds: every method sees the same per-chain initialization
    std::vector<std::future<ChainOutput>> futures;
    for (int i = 0; i < cfg.chains; ++i) {
      futures.push_back(std::async(std::launch::async, [&, i, method] {
        RngStream init_rng(cfg.seed, "chain-" + std::to_string(i) + "/init");
        const Vector x0 = init_rng.normal_vector(setup.prior.dim);
        RngStream rng(cfg.seed,
                      "chain-" + std::to_string(i) + "/" + method);
        return run_method_chain(method, cfg, setup, rng, x0);
      }));
    }
    std::vector<ChainOutput> outs;
    for (auto& f : futures) outs.push_back(f.get());

    int successes = 0;
    double mse_acc = 0.0;
    int mse_n = 0;
    std::vector<std::vector<double>> per_iter_mse;  // [sample idx][chain]
    for (std::size_t c = 0; c < outs.size(); ++c) {
      const auto& o = outs[c];
      const bool success =
          setup.prior.components() <= 1 ||
          (o.samples_x0.empty() ? false
                                : chain_basin(setup.prior, o) == true_comp);
      successes += success ? 1 : 0;
      double mse = std::numeric_limits<double>::quiet_NaN();
      if (setup.x_true && !o.samples_x0.empty()) {
        Vector mean = Vector::Zero(setup.prior.dim);
        for (const auto& s : o.samples_x0) mean += s;
        mean /= static_cast<double>(o.samples_x0.size());
        mse = (mean - *setup.x_true).squaredNorm() / setup.prior.dim;
        mse_acc += mse;
        ++mse_n;
      }
      const double shf =
          o.records.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : o.records.back().sigma_hat;
      cmp_rows.push_back({method, std::to_string(c),
                          success ? "1" : "0", format_double(mse),
                          std::to_string(o.records.empty()
                                             ? 0
                                             : o.records.back().k),
                          format_double(shf)});
      for (const auto& r : o.records)
        trace_rows.push_back({method, std::to_string(c), std::to_string(r.k),
                              format_double(r.sigma_hat)});
      if (setup.x_true) {
        for (std::size_t s = 0; s < o.samples_x0.size(); ++s) {
          if (per_iter_mse.size() <= s) per_iter_mse.emplace_back();
          per_iter_mse[s].push_back(
              (o.samples_x0[s] - *setup.x_true).squaredNorm() /
              setup.prior.dim);
        }
      }
    }
    for (std::size_t s = 0; s < per_iter_mse.size(); ++s) {
      auto vals = per_iter_mse[s];
      if (vals.empty()) continue;
      std::sort(vals.begin(), vals.end());
      auto pct = [&](double q) {
        const double pos = q * (vals.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, vals.size() - 1);
        const double f = pos - lo;
        return vals[lo] + f * (vals[hi] - vals[lo]);
      };
      band_rows.push_back({method,
                           std::to_string(outs.front().warmup +
                                          static_cast<int>(s)),
                           format_double(pct(0.05)), format_double(pct(0.5)),
                           format_double(pct(0.95))});
    }
    const double rate = static_cast<double>(successes) / cfg.chains;
    rate_rows.push_back(
        {method, format_double(rate),
         mse_n ? format_double(mse_acc / mse_n) : "nan"});
    Json mj;
    mj["success_rate"] = rate;
    mj["mean_mse"] = mse_n ? Json(mse_acc / mse_n) : Json(nullptr);
    summary[method] = mj;
  }

  w.write_csv("compare.csv", cmp_header, cmp_rows);
  w.write_csv("success_rates.csv", rate_header, rate_rows);
  w.write_csv("sigma_trace.csv", trace_header, trace_rows);
  w.write_csv("bands.csv", band_header, band_rows);
  w.write_manifest(cfg, Json{{"methods", methods}});
  return CompareResult{summary, cfg.out_dir};
}

}  // namespace nhmc

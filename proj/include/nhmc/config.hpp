#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/decoder.hpp"
#include "nhmc/operators.hpp"
#include "nhmc/prior.hpp"
#include "nhmc/sampler.hpp"
#include "nhmc/schedules.hpp"

namespace nhmc {

using Json = nlohmann::json;

struct PriorSpec {
  std::string preset;  // empty means explicit weights/means/variances
  int dim = 1;
  int components = 2;
  std::uint64_t preset_seed = 0;
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<double> variances;
};

struct ScheduleSpec {
  int total_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct TimestepSpec {
  bool identity = false;
  int count = 2;
  int t_max = 750;
  std::vector<int> indices;  // explicit override when nonempty
};

struct OperatorSpec {
  std::string kind = "identity";
  std::vector<int> keep;       // mask
  int factor = 2;              // avgpool
  double blur_sigma = 1.0;     // circular_blur
  std::vector<int> shape;      // optional [rows, cols] for circular_blur
  double scale = 2.0;          // tonemap_clip
  double lo = 0.0;
  double hi = 1.0;
};

struct NoiseSpec {
  std::string kind = "gaussian";
  double sigma = 0.05;
  double p = 0.1;
  double bound = 0.4;
};

struct BaselineSpec {
  double step_size = 0.01;     // ula / mala
  int iterations = 2000;
  double learning_rate = 0.01; // map
  double sigma_y = 0.05;       // map's assumed noise level
};

struct SamplerSpec {
  std::string method = "nanhmc";  // nhmc | nanhmc | ula | mala | map
  int iterations = 100;
  int leapfrog_steps = 20;
  double step_size = 0.05;
  double decay = 0.95;
  int max_retries = 50;
  int burn_in = 0;
  std::optional<double> sigma_y;  // known-sigma target
  SigmaAnnealSchedule anneal{};
  BaselineSpec ula{};
  BaselineSpec mala{};
  BaselineSpec map{};
};

struct OracleSpec {
  std::vector<std::pair<double, double>> bounds;  // default: +-8 per axis
  int resolution = 801;
  std::optional<double> sigma0;  // decoder spread; estimated when absent
};

// Fully determines a run: config + seed reproduce all artifacts bitwise.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int chains = 1;
  std::string out_dir = "out";
  PriorSpec prior{};
  ScheduleSpec schedule{};
  TimestepSpec timesteps{};
  OperatorSpec op{};
  NoiseSpec noise{};
  std::optional<std::vector<double>> x_true;
  std::optional<std::string> measurement_file;
  SamplerSpec sampler{};
  OracleSpec oracle{};
};

namespace detail {

inline void check_keys(const Json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError(path + "." + key + ": unknown field");
  }
}

template <typename T>
T get_or(const Json& j, const std::string& path, const char* key, T dflt) {
  if (!j.contains(key)) return dflt;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

}  // namespace detail

inline SigmaAnnealSchedule parse_anneal(const Json& j,
                                        const std::string& path) {
  detail::check_keys(j, path, {"kind", "warmup_iters", "offset", "scale"});
  const std::string kind = detail::get_or<std::string>(j, path, "kind", "none");
  const int warmup = detail::get_or<int>(j, path, "warmup_iters", 0);
  const double offset = detail::get_or<double>(j, path, "offset", 1.0);
  const double scale = detail::get_or<double>(j, path, "scale", 0.0);
  if (kind == "none") return no_anneal();
  if (kind == "linear") return make_linear_anneal(offset, scale, warmup);
  if (kind == "sqrt") return make_sqrt_anneal(offset, scale, warmup);
  throw ConfigError(path + ".kind: unknown value '" + kind + "'");
}

inline ExperimentConfig parse_config(const Json& j) {
  detail::check_keys(j, "config",
                     {"seed", "chains", "out", "prior", "schedule",
                      "timesteps", "operator", "noise", "x_true",
                      "measurement", "sampler", "oracle"});
  ExperimentConfig c;
  c.seed = detail::get_or<std::uint64_t>(j, "config", "seed", 0);
  c.chains = detail::get_or<int>(j, "config", "chains", 1);
  require(c.chains >= 1, "config.chains: must be >= 1");
  c.out_dir = detail::get_or<std::string>(j, "config", "out", "out");

  if (j.contains("prior")) {
    const Json& p = j.at("prior");
    detail::check_keys(p, "prior",
                       {"preset", "dim", "components", "preset_seed",
                        "weights", "means", "variances"});
    c.prior.preset = detail::get_or<std::string>(p, "prior", "preset", "");
    c.prior.dim = detail::get_or<int>(p, "prior", "dim", 1);
    c.prior.components = detail::get_or<int>(p, "prior", "components", 2);
    c.prior.preset_seed =
        detail::get_or<std::uint64_t>(p, "prior", "preset_seed", 0);
    c.prior.weights = detail::get_or<std::vector<double>>(
        p, "prior", "weights", {});
    c.prior.means = detail::get_or<std::vector<std::vector<double>>>(
        p, "prior", "means", {});
    c.prior.variances = detail::get_or<std::vector<double>>(
        p, "prior", "variances", {});
    if (c.prior.preset.empty() && c.prior.weights.empty())
      throw ConfigError("prior: needs either a preset or explicit weights");
  }

  if (j.contains("schedule")) {
    const Json& s = j.at("schedule");
    detail::check_keys(s, "schedule", {"total_steps", "beta_min", "beta_max"});
    c.schedule.total_steps =
        detail::get_or<int>(s, "schedule", "total_steps", 1000);
    c.schedule.beta_min =
        detail::get_or<double>(s, "schedule", "beta_min", 1e-4);
    c.schedule.beta_max =
        detail::get_or<double>(s, "schedule", "beta_max", 0.02);
  }

  if (j.contains("timesteps")) {
    const Json& t = j.at("timesteps");
    detail::check_keys(t, "timesteps", {"identity", "count", "t_max",
                                        "indices"});
    c.timesteps.identity =
        detail::get_or<bool>(t, "timesteps", "identity", false);
    c.timesteps.count = detail::get_or<int>(t, "timesteps", "count", 2);
    c.timesteps.t_max = detail::get_or<int>(t, "timesteps", "t_max", 750);
    c.timesteps.indices =
        detail::get_or<std::vector<int>>(t, "timesteps", "indices", {});
  }

  if (j.contains("operator")) {
    const Json& o = j.at("operator");
    detail::check_keys(o, "operator", {"kind", "keep", "factor", "sigma",
                                       "shape", "scale", "lo", "hi"});
    c.op.kind = detail::get_or<std::string>(o, "operator", "kind", "identity");
    c.op.keep = detail::get_or<std::vector<int>>(o, "operator", "keep", {});
    c.op.factor = detail::get_or<int>(o, "operator", "factor", 2);
    c.op.blur_sigma = detail::get_or<double>(o, "operator", "sigma", 1.0);
    c.op.shape = detail::get_or<std::vector<int>>(o, "operator", "shape", {});
    c.op.scale = detail::get_or<double>(o, "operator", "scale", 2.0);
    c.op.lo = detail::get_or<double>(o, "operator", "lo", 0.0);
    c.op.hi = detail::get_or<double>(o, "operator", "hi", 1.0);
  }

  if (j.contains("noise")) {
    const Json& nj = j.at("noise");
    detail::check_keys(nj, "noise", {"kind", "sigma", "p", "bound"});
    c.noise.kind = detail::get_or<std::string>(nj, "noise", "kind", "gaussian");
    c.noise.sigma = detail::get_or<double>(nj, "noise", "sigma", 0.05);
    c.noise.p = detail::get_or<double>(nj, "noise", "p", 0.1);
    c.noise.bound = detail::get_or<double>(nj, "noise", "bound", 0.4);
  }

  if (j.contains("x_true"))
    c.x_true = detail::get_or<std::vector<double>>(j, "config", "x_true", {});
  if (j.contains("measurement")) {
    const Json& m = j.at("measurement");
    detail::check_keys(m, "measurement", {"file"});
    c.measurement_file =
        detail::get_or<std::string>(m, "measurement", "file", "");
  }

  if (j.contains("sampler")) {
    const Json& s = j.at("sampler");
    detail::check_keys(s, "sampler",
                       {"method", "iterations", "leapfrog_steps", "step_size",
                        "decay", "max_retries", "burn_in", "sigma_y", "anneal",
                        "ula", "mala", "map"});
    c.sampler.method =
        detail::get_or<std::string>(s, "sampler", "method", "nanhmc");
    c.sampler.iterations =
        detail::get_or<int>(s, "sampler", "iterations", 100);
    c.sampler.leapfrog_steps =
        detail::get_or<int>(s, "sampler", "leapfrog_steps", 20);
    c.sampler.step_size =
        detail::get_or<double>(s, "sampler", "step_size", 0.05);
    c.sampler.decay = detail::get_or<double>(s, "sampler", "decay", 0.95);
    c.sampler.max_retries =
        detail::get_or<int>(s, "sampler", "max_retries", 50);
    c.sampler.burn_in = detail::get_or<int>(s, "sampler", "burn_in", 0);
    if (s.contains("sigma_y") && !s.at("sigma_y").is_null())
      c.sampler.sigma_y = detail::get_or<double>(s, "sampler", "sigma_y", 0.0);
    if (s.contains("anneal"))
      c.sampler.anneal = parse_anneal(s.at("anneal"), "sampler.anneal");
    auto parse_baseline = [&](const char* key, BaselineSpec& b) {
      if (!s.contains(key)) return;
      const Json& bj = s.at(key);
      const std::string path = std::string("sampler.") + key;
      detail::check_keys(bj, path, {"step_size", "iterations",
                                    "learning_rate", "sigma_y"});
      b.step_size = detail::get_or<double>(bj, path, "step_size", b.step_size);
      b.iterations = detail::get_or<int>(bj, path, "iterations", b.iterations);
      b.learning_rate =
          detail::get_or<double>(bj, path, "learning_rate", b.learning_rate);
      b.sigma_y = detail::get_or<double>(bj, path, "sigma_y", b.sigma_y);
    };
    parse_baseline("ula", c.sampler.ula);
    parse_baseline("mala", c.sampler.mala);
    parse_baseline("map", c.sampler.map);
  }

  if (j.contains("oracle")) {
    const Json& o = j.at("oracle");
    detail::check_keys(o, "oracle", {"bounds", "resolution", "sigma0"});
    if (o.contains("bounds")) {
      const auto raw = detail::get_or<std::vector<std::vector<double>>>(
          o, "oracle", "bounds", {});
      for (const auto& b : raw) {
        if (b.size() != 2)
          throw ConfigError("oracle.bounds: each entry must be [lo, hi]");
        c.oracle.bounds.emplace_back(b[0], b[1]);
      }
    }
    c.oracle.resolution =
        detail::get_or<int>(o, "oracle", "resolution", 801);
    if (o.contains("sigma0") && !o.at("sigma0").is_null())
      c.oracle.sigma0 = detail::get_or<double>(o, "oracle", "sigma0", 0.0);
  }
  return c;
}

inline Json anneal_to_json(const SigmaAnnealSchedule& a) {
  Json j;
  switch (a.kind) {
    case SigmaAnnealSchedule::Kind::none: j["kind"] = "none"; break;
    case SigmaAnnealSchedule::Kind::linear: j["kind"] = "linear"; break;
    case SigmaAnnealSchedule::Kind::sqrt_shape: j["kind"] = "sqrt"; break;
  }
  j["warmup_iters"] = a.warmup_iters;
  j["offset"] = a.offset;
  j["scale"] = a.scale;
  return j;
}

// Canonical serialization: every field emitted, defaults included, keys
// sorted by the JSON library. parse(to_json(c)) == c.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["chains"] = c.chains;
  j["out"] = c.out_dir;
  Json p;
  p["preset"] = c.prior.preset;
  p["dim"] = c.prior.dim;
  p["components"] = c.prior.components;
  p["preset_seed"] = c.prior.preset_seed;
  p["weights"] = c.prior.weights;
  p["means"] = c.prior.means;
  p["variances"] = c.prior.variances;
  j["prior"] = p;
  j["schedule"] = Json{{"total_steps", c.schedule.total_steps},
                       {"beta_min", c.schedule.beta_min},
                       {"beta_max", c.schedule.beta_max}};
  j["timesteps"] = Json{{"identity", c.timesteps.identity},
                        {"count", c.timesteps.count},
                        {"t_max", c.timesteps.t_max},
                        {"indices", c.timesteps.indices}};
  j["operator"] = Json{{"kind", c.op.kind},     {"keep", c.op.keep},
                       {"factor", c.op.factor}, {"sigma", c.op.blur_sigma},
                       {"shape", c.op.shape},   {"scale", c.op.scale},
                       {"lo", c.op.lo},         {"hi", c.op.hi}};
  j["noise"] = Json{{"kind", c.noise.kind},
                    {"sigma", c.noise.sigma},
                    {"p", c.noise.p},
                    {"bound", c.noise.bound}};
  if (c.x_true) j["x_true"] = *c.x_true;
  if (c.measurement_file) j["measurement"] = Json{{"file", *c.measurement_file}};
  Json s;
  s["method"] = c.sampler.method;
  s["iterations"] = c.sampler.iterations;
  s["leapfrog_steps"] = c.sampler.leapfrog_steps;
  s["step_size"] = c.sampler.step_size;
  s["decay"] = c.sampler.decay;
  s["max_retries"] = c.sampler.max_retries;
  s["burn_in"] = c.sampler.burn_in;
  s["sigma_y"] = c.sampler.sigma_y ? Json(*c.sampler.sigma_y) : Json(nullptr);
  s["anneal"] = anneal_to_json(c.sampler.anneal);
  auto baseline_json = [](const BaselineSpec& b) {
    return Json{{"step_size", b.step_size},
                {"iterations", b.iterations},
                {"learning_rate", b.learning_rate},
                {"sigma_y", b.sigma_y}};
  };
  s["ula"] = baseline_json(c.sampler.ula);
  s["mala"] = baseline_json(c.sampler.mala);
  s["map"] = baseline_json(c.sampler.map);
  j["sampler"] = s;
  Json o;
  Json bounds = Json::array();
  for (const auto& [lo, hi] : c.oracle.bounds)
    bounds.push_back(Json::array({lo, hi}));
  o["bounds"] = bounds;
  o["resolution"] = c.oracle.resolution;
  o["sigma0"] = c.oracle.sigma0 ? Json(*c.oracle.sigma0) : Json(nullptr);
  j["oracle"] = o;
  return j;
}

// --- construction of library objects from specs -----------------------

inline GmmPrior build_prior(const PriorSpec& spec) {
  if (!spec.preset.empty())
    return preset_prior(spec.preset, spec.dim, spec.components,
                        spec.preset_seed);
  std::vector<Vector> means;
  for (const auto& m : spec.means) {
    Vector v(static_cast<int>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i)
      v[static_cast<int>(i)] = m[i];
    means.push_back(std::move(v));
  }
  return make_gmm(spec.weights, std::move(means), spec.variances);
}

inline AlphaBarSchedule build_schedule(const ScheduleSpec& spec) {
  return build_linear_beta_schedule(spec.total_steps, spec.beta_min,
                                    spec.beta_max);
}

inline DdimDecoder build_decoder(const ExperimentConfig& c,
                                 const GmmPrior& prior) {
  if (c.timesteps.identity) return DdimDecoder::identity(prior.dim);
  const AlphaBarSchedule sched = build_schedule(c.schedule);
  const TimestepSchedule steps =
      c.timesteps.indices.empty()
          ? select_timesteps(sched, c.timesteps.count, c.timesteps.t_max)
          : timesteps_from_indices(sched, c.timesteps.indices);
  return DdimDecoder(sched, steps, prior);
}

inline ForwardOperator build_operator(const OperatorSpec& spec, int n) {
  if (spec.kind == "identity") return ForwardOperator::identity(n);
  if (spec.kind == "mask") return ForwardOperator::mask(n, spec.keep);
  if (spec.kind == "avgpool") return ForwardOperator::avgpool(n, spec.factor);
  if (spec.kind == "circular_blur") {
    std::optional<std::pair<int, int>> shape;
    if (!spec.shape.empty()) {
      if (spec.shape.size() != 2)
        throw ConfigError("operator.shape: expected [rows, cols]");
      shape = std::make_pair(spec.shape[0], spec.shape[1]);
    }
    return ForwardOperator::circular_blur(n, spec.blur_sigma, shape);
  }
  if (spec.kind == "dft_magnitude") return ForwardOperator::dft_magnitude(n);
  if (spec.kind == "tonemap_clip")
    return ForwardOperator::tonemap_clip(n, spec.scale, spec.lo, spec.hi);
  throw ConfigError("operator.kind: unknown value '" + spec.kind + "'");
}

inline NoiseModel build_noise(const NoiseSpec& spec) {
  if (spec.kind == "gaussian") return NoiseModel::gaussian(spec.sigma);
  if (spec.kind == "impulse") return NoiseModel::impulse(spec.p);
  if (spec.kind == "speckle") return NoiseModel::speckle(spec.bound);
  throw ConfigError("noise.kind: unknown value '" + spec.kind + "'");
}

inline HmcConfig build_hmc_config(const ExperimentConfig& c) {
  HmcConfig h;
  h.iterations = c.sampler.iterations;
  h.leapfrog_steps = c.sampler.leapfrog_steps;
  h.step_size = c.sampler.step_size;
  h.decay = c.sampler.decay;
  h.max_retries = c.sampler.max_retries;
  h.burn_in = c.sampler.burn_in;
  h.sigma_schedule = c.sampler.anneal;
  if (c.sampler.method == "nanhmc") {
    h.mode = PotentialMode::jeffreys;
    h.sigma_target = std::nullopt;
  } else {
    h.mode = PotentialMode::known_sigma;
    if (c.sampler.sigma_y)
      h.sigma_target = c.sampler.sigma_y;
    else if (c.noise.kind == "gaussian" && c.noise.sigma > 0.0)
      h.sigma_target = c.noise.sigma;
    else
      throw ConfigError(
          "sampler.sigma_y: required for known-sigma methods with "
          "non-gaussian or zero noise");
  }
  h.validate();
  return h;
}

}  // namespace nhmc

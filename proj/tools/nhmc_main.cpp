// Config-driven experiment runner for the noise-space HMC samplers.
//
//   nhmc run <config.json>      synthesize the problem and run chains
//   nhmc sweep <config.json>    re-run across one hyperparameter axis
//   nhmc oracle <config.json>   emit ground-truth posteriors / residuals
//   nhmc compare <config.json>  paired-seed multi-method comparison
//
// Exit codes: 0 ok, 1 runtime failure (chain abort), 2 invalid config.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nhmc/nhmc.hpp"

namespace {

int log_level() {
  const char* env = std::getenv("NHMC_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[nhmc] " << msg << "\n";
}

nhmc::ExperimentConfig load_config(const std::string& path,
                                   std::optional<std::uint64_t> seed,
                                   std::optional<std::string> out,
                                   std::optional<int> chains) {
  std::ifstream f(path);
  if (!f) throw nhmc::ConfigError("cannot open config file: " + path);
  nhmc::Json j;
  try {
    j = nhmc::Json::parse(f, nullptr, true, true);
  } catch (const nhmc::Json::exception& e) {
    throw nhmc::ConfigError(std::string("config is not valid JSON: ") +
                            e.what());
  }
  nhmc::ExperimentConfig cfg = nhmc::parse_config(j);
  if (seed) cfg.seed = *seed;
  if (out) cfg.out_dir = *out;
  if (chains) cfg.chains = *chains;
  return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> vals;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t next = csv.find(',', pos);
    const std::string tok = csv.substr(
        pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!tok.empty()) vals.push_back(std::stod(tok));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return vals;
}

std::vector<std::string> parse_methods(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t next = csv.find(',', pos);
    const std::string tok = csv.substr(
        pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!tok.empty()) out.push_back(tok);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noise-space HMC experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> chains;
  std::string axis;
  std::string values_csv;
  std::string methods_csv = "nanhmc,map";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "experiment config JSON")
        ->required();
    sub->add_option("--seed", seed, "override the root seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--chains", chains, "override the chain count");
  };

  CLI::App* run = app.add_subcommand("run", "run the configured sampler");
  add_common(run);

  CLI::App* sweep =
      app.add_subcommand("sweep", "sweep one hyperparameter axis");
  add_common(sweep);
  sweep->add_option("--axis", axis, "one of delta, L, gamma, decoder_steps, K")
      ->required();
  sweep->add_option("--values", values_csv, "comma-separated axis values")
      ->required();

  CLI::App* oracle =
      app.add_subcommand("oracle", "emit ground-truth posterior data");
  add_common(oracle);

  CLI::App* compare =
      app.add_subcommand("compare", "paired-seed method comparison");
  add_common(compare);
  compare->add_option("--methods", methods_csv,
                      "comma-separated subset of nhmc,nanhmc,ula,mala,map");

  CLI11_PARSE(app, argc, argv);

  try {
    const nhmc::ExperimentConfig cfg =
        load_config(config_path, seed, out_dir, chains);
    if (run->parsed()) {
      info("running " + cfg.sampler.method + " with " +
           std::to_string(cfg.chains) + " chain(s)");
      const nhmc::RunResult res = nhmc::run_experiment(cfg);
      if (res.aborted) {
        std::cerr << "chain aborted: " << res.abort_message << "\n";
        return 1;
      }
      info("artifacts written to " + res.out_dir);
    } else if (sweep->parsed()) {
      const auto vals = parse_values(values_csv);
      info("sweeping " + axis + " over " + std::to_string(vals.size()) +
           " values");
      nhmc::run_sweep(cfg, axis, vals);
      info("artifacts written to " + cfg.out_dir);
    } else if (oracle->parsed()) {
      nhmc::run_oracle(cfg);
      info("artifacts written to " + cfg.out_dir);
    } else if (compare->parsed()) {
      const auto methods = parse_methods(methods_csv);
      const nhmc::CompareResult res = nhmc::run_compare(cfg, methods);
      std::cout << res.summary.dump(2) << "\n";
      info("artifacts written to " + res.out_dir);
    }
  } catch (const nhmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

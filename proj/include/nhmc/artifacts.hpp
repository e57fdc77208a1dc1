#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "nhmc/core.hpp"
#include "nhmc/config.hpp"
#include "nhmc/rng.hpp"

namespace nhmc {

// Shortest exact decimal form; identical bytes across runs of one build.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) {
  const std::string canonical = to_json(c).dump();
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

// Collects output files so the manifest can account for every artifact.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::string>& outputs() const { return outputs_; }

  void write_text(const std::string& name, const std::string& content) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open output file: " + name);
    f << content;
    outputs_.push_back(name);
  }

  void write_json(const std::string& name, const Json& j) {
    write_text(name, j.dump(2) + "\n");
  }

  // rows of already-formatted cells
  void write_csv(const std::string& name,
                 const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out += ',';
      out += header[i];
    }
    out += '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += row[i];
      }
      out += '\n';
    }
    write_text(name, out);
  }

  void write_manifest(const ExperimentConfig& cfg,
                      const Json& extra = Json::object()) {
    Json m;
    m["config"] = to_json(cfg);
    m["config_hash"] = config_hash(cfg);
    m["root_seed"] = cfg.seed;
    std::vector<std::string> files = outputs_;
    files.push_back("manifest.json");
    std::sort(files.begin(), files.end());
    m["outputs"] = files;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_json("manifest.json", m);
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> outputs_;
};

inline Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const Json& a) {
  Vector v(static_cast<int>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    v[static_cast<int>(i)] = a[i].get<double>();
  return v;
}

}  // namespace nhmc

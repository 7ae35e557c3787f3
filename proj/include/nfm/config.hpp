#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "nfm/data.hpp"
#include "nfm/model.hpp"
#include "nfm/tasks.hpp"

namespace nfm {

struct SinesConfig {
  std::size_t length = 4000;
  std::vector<double> periods{24.0, 37.0, 60.0};
  std::vector<double> amplitudes{1.0, 0.7, 0.5};
  double noise = 0.05;
};

struct SpikeConfig {
  double ratio = 0.01;
  std::size_t segment = 5;
  double magnitude = 4.0;
};

struct CsvConfig {
  std::string path;
  std::vector<std::string> columns;
  std::string label_column;  ///< anomaly labels; empty means none
};

struct DataConfig {
  std::string source = "synth";  ///< synth | sines | spikes | csv
  SynthSpec synth;
  SinesConfig sines;
  SpikeConfig spikes;
  CsvConfig csv;
  std::size_t window = 128;       ///< N for series sources
  std::size_t train_stride = 1;
  std::size_t eval_stride = 0;    ///< forecast val/test stride; 0 means 1. Anomaly scoring windows never overlap
  std::vector<double> split{0.6, 0.2, 0.2};
  bool standardize = true;
};

struct OptimConfig {
  std::size_t epochs = 10;
  std::size_t batch = 8;
  std::size_t eval_batch = 32;
  double lr = 1e-3;
  double lr_min = 0.0;
  std::string schedule = "cosine";  ///< cosine | constant
  std::size_t patience = 3;
  std::string sampler = "shuffle";  ///< shuffle | balanced (equal class counts per run of `classes` samples)
};

struct RunConfig {
  TaskSpec task;
  ModelConfig model;  ///< channels, out_dim and head are derived from task and data
  DataConfig data;
  OptimConfig optim;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical serialization, excluding seed and out_dir.
std::uint64_t config_hash(const RunConfig& c);
std::string hash_hex(std::uint64_t h);

/// Stream-specific seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& stream);

}  // namespace nfm

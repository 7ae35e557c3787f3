#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nfm/config.hpp"
#include "nfm/data.hpp"
#include "nfm/model.hpp"

namespace nfm {

/// One split of model-ready windows at full resolution.
struct Split {
  std::string name;
  std::size_t num = 0;
  std::vector<double> inputs;   ///< [num, n, c]
  std::vector<double> targets;  ///< forecast [num, n + h, c]; anomaly [num, n, c]; empty for classification
  std::vector<int> labels;      ///< classification [num]; anomaly per point [num * n]
};

struct PreparedData {
  TaskKind kind = TaskKind::Classify;
  std::size_t n = 0;         ///< input window length at full resolution
  std::size_t horizon = 0;
  std::size_t channels = 1;
  std::size_t classes = 0;
  Split train, val, test;
  Split train_scoring;       ///< anomaly: non-overlapping train windows for the threshold pool
  std::vector<std::size_t> split_bounds;

  const Split& split(const std::string& name) const;
};

/// Builds every split from the config; a pure function of the config and seed.
PreparedData prepare_data(const RunConfig& cfg);
/// Model config with channels, output width and head chosen for the task.
ModelConfig resolved_model(const RunConfig& cfg, std::size_t channels);

/// Ratio of test to train sampling rate; 1 is the training resolution.
struct SamplingRate {
  Rational ratio{1};
  /// Inverse ratio as the extra m_f factor; throws if ratio > 1.
  Rational inverse() const;
};

/// Forward outputs for every window of a split, gathered in window order.
/// Forecast/anomaly outputs are de-normalized to the data scale.
struct Predictions {
  std::vector<double> values;  ///< forecast [num, n+h, c], anomaly [num, n, c], classification logits [num, classes]
  std::size_t num = 0;
  std::size_t width = 0;       ///< values per window
};

Predictions predict(const RunConfig& cfg, const PreparedData& data, const NfmModel& model, const Split& split,
                    SamplingRate sr = {});

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  ///< classification only
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  bool diverged = false;
  std::string rng_state;
};

/// Training visit order. Balanced: classes are shuffled separately and
/// interleaved round-robin, so every run of `classes` consecutive samples holds
/// one per class while the smaller classes last.
std::vector<std::size_t> epoch_order(const Split& train, std::size_t classes, bool balanced, Rng& rng);

/// Adam with the configured schedule; early stopping on the validation
/// monitor. On return the model holds the best (or last good) parameters.
TrainResult train_model(const RunConfig& cfg, const PreparedData& data, NfmModel& model,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

using Metrics = std::vector<std::pair<std::string, double>>;

/// Fraction of rows whose arg-max matches the label.
double accuracy(const Predictions& p, std::span<const int> labels);
/// MSE/MAE on the horizon slice and the last-value persistence baseline.
Metrics forecast_metrics(const PreparedData& d, const Split& s, const Predictions& p);

struct AnomalyOutcome {
  std::vector<double> scores;  ///< per test point
  std::vector<int> flags;      ///< after point adjustment
  double threshold = 0.0;
};

/// MSE/MAE on the horizon slice (plus the persistence baseline), accuracy,
/// or precision/recall/F1 with point adjustment.
Metrics evaluate(const RunConfig& cfg, const PreparedData& data, const NfmModel& model, const std::string& split,
                 SamplingRate sr = {}, AnomalyOutcome* anomaly = nullptr);

/// Mean |R[k]| over probe windows, per block, bin and hidden channel.
struct FilterDump {
  std::size_t blocks = 0, bins = 0, hidden = 0;
  std::vector<double> magnitude;  ///< [blocks, bins, hidden]
  std::vector<double> channel_mean(std::size_t block) const;
  /// Mass of the channel-mean magnitude in bins [lo, hi] over the total,
  /// averaged over blocks.
  double band_ratio(std::size_t lo, std::size_t hi) const;
};

FilterDump dump_filter(const RunConfig& cfg, const PreparedData& data, const NfmModel& model, std::size_t probes = 16);
void write_filter_csv(const std::filesystem::path& path, const FilterDump& dump, std::size_t block);

// ---------------------------------------------------------------------------
// Checkpoints: JSON holding the run config, the resolved model config, the
// flat parameter vector in store order, the frozen INR frequencies, the
// training RNG state and the config hash.

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const NfmModel& model,
                     const std::string& rng_state, std::size_t epoch);

struct Checkpoint {
  RunConfig config;
  std::uint64_t hash = 0;
  std::unique_ptr<NfmModel> model;
  std::string rng_state;
  std::size_t epoch = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// One JSON object per line: {task, seed, config_hash, metric, value}.
std::string metrics_jsonl(const RunConfig& cfg, const Metrics& metrics);

struct GradReport {
  std::vector<std::pair<std::string, double>> components;  ///< max relative error per component
  std::size_t params = 0;
  double max_error() const;
};

/// Central-difference check of every layer and loss on a toy configuration.
GradReport gradcheck_suite(const ModelConfig& toy, std::uint64_t seed);
/// Toy dims used by the gradcheck command (< 5k parameters).
ModelConfig toy_model_config();

}  // namespace nfm

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nfm/autodiff.hpp"
#include "nfm/freq_manip.hpp"

namespace nfm {

enum class TaskKind { Forecast, Classify, Anomaly };
enum class NormMode { RevIN, MeanOnly, None };

std::string to_string(TaskKind kind);
std::string to_string(NormMode mode);
TaskKind parse_task_kind(const std::string& s);
NormMode parse_norm_mode(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::Classify;
  std::size_t horizon = 0;       ///< forecast
  std::size_t downsample = 2;    ///< anomaly: dr
  std::size_t n_classes = 10;    ///< classify
  double lambda = 0.5;           ///< time/frequency loss balance
  NormMode norm = NormMode::None;
  double anomaly_ratio = 1.0;    ///< percent of points flagged

  /// Extension factors for an input of length n:
  /// forecast m_tau = (n + horizon)/n, anomaly m_f = dr, classify identity.
  ExtensionFactors factors(std::size_t n) const;
};

// ---------------------------------------------------------------------------
// Losses on graph values. Sequences are [B, L, c] with time on axis 1.

/// Mean over bins, channels and batch of |rfft(yhat) - rfft(y)|.
ad::Var focal_freq_loss(ad::Var yhat, ad::Var y);
ad::Var mse_loss(ad::Var yhat, ad::Var y);
/// lambda * MSE + (1 - lambda) * focal frequency loss.
ad::Var forecast_loss(ad::Var yhat, ad::Var y, double lambda);
ad::Var anomaly_loss(ad::Var xhat, ad::Var x, double lambda);
/// Global average pooling over axis 1 followed by a linear map.
ad::Var classify_head(ad::Var z, ad::Var weight, ad::Var bias);

// ---------------------------------------------------------------------------
// Instance normalization of inputs, re-applied to outputs.

/// Per-instance, per-channel statistics of a [B, N, c] batch.
struct NormStats {
  NormMode mode = NormMode::None;
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::vector<double> mean;  ///< [B, c]
  std::vector<double> std;   ///< [B, c]; 1 unless mode is RevIN
};

struct Normalized {
  std::vector<double> data;
  NormStats stats;
};

constexpr double kNormEps = 1e-5;

/// x is row-major [batch, length, channels].
Normalized norm_apply(std::span<const double> x, std::size_t batch, std::size_t channels, NormMode mode);
/// y is row-major [batch, any length, channels].
std::vector<double> norm_invert(std::span<const double> y, const NormStats& stats);
/// Graph version of norm_invert so losses can be taken on the original scale.
ad::Var norm_invert(ad::Var y, const NormStats& stats);

// ---------------------------------------------------------------------------
// Anomaly scoring.

/// Squared reconstruction error per time step, averaged over channels.
/// Inputs are row-major [n, channels].
std::vector<double> anomaly_score(std::span<const double> x, std::span<const double> xhat, std::size_t channels);
/// The (100 - ratio_percent) percentile of the pooled scores, linear
/// interpolation between order statistics.
double threshold_by_ratio(std::span<const double> scores, double ratio_percent);
/// Whole ground-truth segments become positive when any point inside is flagged.
std::vector<int> point_adjust(std::span<const int> pred, std::span<const int> truth);

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positive = 0, false_positive = 0, false_negative = 0;
};

/// 0/0 precision or recall count as 0.
DetectionMetrics detection_metrics(std::span<const int> pred, std::span<const int> truth);

}  // namespace nfm

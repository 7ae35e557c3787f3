#include "nfm/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "nfm/error.hpp"

namespace nfm {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Forecast: return "forecast";
    case TaskKind::Classify: return "classify";
    case TaskKind::Anomaly: return "anomaly";
  }
  return "?";
}

std::string to_string(NormMode mode) {
  switch (mode) {
    case NormMode::RevIN: return "revin";
    case NormMode::MeanOnly: return "mean-only";
    case NormMode::None: return "none";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "forecast") return TaskKind::Forecast;
  if (s == "classify") return TaskKind::Classify;
  if (s == "anomaly") return TaskKind::Anomaly;
  throw Error("unknown task kind '" + s + "'");
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "revin") return NormMode::RevIN;
  if (s == "mean-only") return NormMode::MeanOnly;
  if (s == "none") return NormMode::None;
  throw Error("unknown norm mode '" + s + "'");
}

ExtensionFactors TaskSpec::factors(std::size_t n) const {
  ExtensionFactors f;
  switch (kind) {
    case TaskKind::Forecast:
      f.m_tau = Rational(static_cast<std::int64_t>(n + horizon), static_cast<std::int64_t>(n));
      break;
    case TaskKind::Anomaly:
      f.m_f = Rational(static_cast<std::int64_t>(downsample));
      break;
    case TaskKind::Classify: break;
  }
  return f;
}

// ---------------------------------------------------------------------------

ad::Var focal_freq_loss(ad::Var yhat, ad::Var y) {
  if (yhat.shape() != y.shape() || yhat.rank() != 3) {
    throw Error("focal_freq_loss: shapes " + ad::to_string(yhat.shape()) + " and " + ad::to_string(y.shape()));
  }
  // rfft is linear, so the spectrum of the difference is the difference of spectra
  return ad::mean(ad::complex_abs(ad::rfft(ad::sub(yhat, y), 1)));
}

ad::Var mse_loss(ad::Var yhat, ad::Var y) {
  if (yhat.shape() != y.shape()) {
    throw Error("mse_loss: shapes " + ad::to_string(yhat.shape()) + " and " + ad::to_string(y.shape()));
  }
  return ad::mean(ad::square(ad::sub(yhat, y)));
}

ad::Var forecast_loss(ad::Var yhat, ad::Var y, double lambda) {
  return ad::add(ad::scale(mse_loss(yhat, y), lambda), ad::scale(focal_freq_loss(yhat, y), 1.0 - lambda));
}

ad::Var anomaly_loss(ad::Var xhat, ad::Var x, double lambda) { return forecast_loss(xhat, x, lambda); }

ad::Var classify_head(ad::Var z, ad::Var weight, ad::Var bias) { return ad::linear(ad::mean_axis(z, 1), weight, bias); }

// ---------------------------------------------------------------------------

Normalized norm_apply(std::span<const double> x, std::size_t batch, std::size_t channels, NormMode mode) {
  if (batch == 0 || channels == 0 || x.size() % (batch * channels) != 0) {
    throw Error("norm_apply: data size does not match [batch, length, channels]");
  }
  const std::size_t len = x.size() / (batch * channels);
  Normalized out;
  out.stats.mode = mode;
  out.stats.batch = batch;
  out.stats.channels = channels;
  out.stats.mean.assign(batch * channels, 0.0);
  out.stats.std.assign(batch * channels, 1.0);
  out.data.assign(x.begin(), x.end());
  if (mode == NormMode::None) return out;

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      double mu = 0.0;
      for (std::size_t t = 0; t < len; ++t) mu += x[(b * len + t) * channels + c];
      mu /= static_cast<double>(len);
      double sd = 1.0;
      if (mode == NormMode::RevIN) {
        double var = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          const double dv = x[(b * len + t) * channels + c] - mu;
          var += dv * dv;
        }
        var /= static_cast<double>(len);
        sd = std::sqrt(var + kNormEps);
      }
      out.stats.mean[b * channels + c] = mu;
      out.stats.std[b * channels + c] = sd;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = (b * len + t) * channels + c;
        out.data[i] = (x[i] - mu) / sd;
      }
    }
  }
  return out;
}

std::vector<double> norm_invert(std::span<const double> y, const NormStats& stats) {
  const std::size_t bc = stats.batch * stats.channels;
  if (bc == 0 || y.size() % bc != 0) throw Error("norm_invert: data size does not match the statistics");
  const std::size_t len = y.size() / bc;
  std::vector<double> out(y.begin(), y.end());
  for (std::size_t b = 0; b < stats.batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < stats.channels; ++c) {
        const std::size_t i = (b * len + t) * stats.channels + c;
        out[i] = y[i] * stats.std[b * stats.channels + c] + stats.mean[b * stats.channels + c];
      }
  return out;
}

ad::Var norm_invert(ad::Var y, const NormStats& stats) {
  if (stats.mode == NormMode::None) return y;
  if (y.rank() != 3 || y.dim(0) != stats.batch || y.dim(2) != stats.channels) {
    throw Error("norm_invert: shape " + ad::to_string(y.shape()) + " does not match the statistics");
  }
  const std::size_t len = y.dim(1);
  std::vector<double> gain(y.value().size()), shift(y.value().size());
  for (std::size_t b = 0; b < stats.batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < stats.channels; ++c) {
        const std::size_t i = (b * len + t) * stats.channels + c;
        gain[i] = stats.std[b * stats.channels + c];
        shift[i] = stats.mean[b * stats.channels + c];
      }
  ad::Tape& tape = y.tape();
  return ad::add(ad::mul(y, tape.constant(y.shape(), std::move(gain))), tape.constant(y.shape(), std::move(shift)));
}

// ---------------------------------------------------------------------------

std::vector<double> anomaly_score(std::span<const double> x, std::span<const double> xhat, std::size_t channels) {
  if (x.size() != xhat.size() || channels == 0 || x.size() % channels != 0) {
    throw Error("anomaly_score: input and reconstruction shapes differ");
  }
  const std::size_t n = x.size() / channels;
  std::vector<double> score(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = x[t * channels + c] - xhat[t * channels + c];
      score[t] += d * d;
    }
    score[t] /= static_cast<double>(channels);
  }
  return score;
}

double threshold_by_ratio(std::span<const double> scores, double ratio_percent) {
  if (scores.empty()) throw Error("threshold_by_ratio: empty score pool");
  if (ratio_percent < 0.0 || ratio_percent > 100.0) throw Error("threshold_by_ratio: ratio must be in [0, 100]");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = (100.0 - ratio_percent) / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<int> point_adjust(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw Error("point_adjust: prediction and truth lengths differ");
  std::vector<int> out(pred.begin(), pred.end());
  std::size_t i = 0;
  while (i < truth.size()) {
    if (truth[i] == 0) {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end < truth.size() && truth[end] != 0) ++end;
    const bool hit = std::any_of(pred.begin() + static_cast<std::ptrdiff_t>(i), pred.begin() + static_cast<std::ptrdiff_t>(end),
                                 [](int p) { return p != 0; });
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(i), out.begin() + static_cast<std::ptrdiff_t>(end), 1);
    i = end;
  }
  return out;
}

DetectionMetrics detection_metrics(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw Error("detection_metrics: prediction and truth lengths differ");
  DetectionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    if (p && t) ++m.true_positive;
    else if (p) ++m.false_positive;
    else if (t) ++m.false_negative;
  }
  const double tp = static_cast<double>(m.true_positive);
  const double pp = tp + static_cast<double>(m.false_positive);
  const double ap = tp + static_cast<double>(m.false_negative);
  m.precision = pp > 0.0 ? tp / pp : 0.0;
  m.recall = ap > 0.0 ? tp / ap : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

}  // namespace nfm

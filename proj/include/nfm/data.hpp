#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nfm/rng.hpp"

namespace nfm {

/// Band-limited class signals: S fixed class frequencies in [band_lo, band_hi]
/// plus R per-sample random frequencies and Gaussian noise.
struct SynthSpec {
  std::size_t classes = 10;      ///< K
  std::size_t fixed = 20;        ///< S
  std::size_t random = 40;       ///< R
  std::size_t length = 2000;     ///< N, sampled on tau = n/N over a unit timespan
  std::size_t band_lo = 320;     ///< f_A
  std::size_t band_hi = 590;     ///< f_B
  double noise = 0.5;            ///< sigma
  std::size_t per_class = 100;
  double phase = 0.0;            ///< theta, shared by every component
  std::size_t random_max = 0;    ///< upper bound of random frequencies; 0 means Nyquist

  std::size_t nyquist() const { return length / 2; }
  void validate() const;
};

struct SynthData {
  std::vector<double> signals;  ///< [classes * per_class, length], class-major
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> class_freqs;  ///< sorted support per class
  std::size_t length = 0;
  std::size_t count() const { return labels.size(); }
};

SynthData synth_generate(const SynthSpec& spec, Rng& rng);

/// Multichannel series, row-major [length, channels].
struct Series {
  std::vector<double> data;
  std::size_t channels = 1;
  std::vector<std::string> names;
  std::size_t length() const { return channels == 0 ? 0 : data.size() / channels; }
  double at(std::size_t t, std::size_t c) const { return data[t * channels + c]; }
};

/// Sum of sinusoids sin(2 pi f t / period) with given amplitudes, plus noise.
Series sines_series(std::size_t length, std::span<const double> periods, std::span<const double> amps, double noise,
                    Rng& rng);

struct AnomalySeries {
  Series series;
  std::vector<int> labels;  ///< 1 inside injected segments
};

/// Injects additive spike segments covering about `ratio` of the points.
AnomalySeries inject_spikes(Series base, double ratio, std::size_t segment, double magnitude, Rng& rng);

/// Header row required. A first column whose first data cell is not numeric
/// is treated as a timestamp and dropped. `columns` selects channels by name
/// (empty keeps all).
Series load_csv(const std::filesystem::path& path, const std::vector<std::string>& columns = {});

struct WindowDataset {
  std::vector<double> windows;  ///< [num, n, channels]
  std::vector<double> targets;  ///< [num, n + horizon, channels]: the whole extended span
  std::size_t num = 0, n = 0, horizon = 0, channels = 1;
  std::string split;
};

/// Every start t with t + n + horizon <= length, stepping by stride.
WindowDataset make_windows(const Series& s, std::size_t n, std::size_t horizon, std::size_t stride,
                           const std::string& split = "");

struct SplitSeries {
  Series train, val, test;
  std::size_t train_end = 0, val_end = 0;  ///< boundaries in the source series
};

/// Contiguous chronological split. Ratios are fractions of the length and
/// the test part takes the remainder.
SplitSeries split_chronological(const Series& s, double train_ratio, double val_ratio);

struct Standardizer {
  std::vector<double> mean, std;
  static Standardizer fit(const Series& s);
  void apply(Series& s) const;
  void invert(std::span<double> data, std::size_t channels) const;
};

/// Flat float64 payload at `<stem>.bin`, shape and split boundaries at `<stem>.json`.
struct CachedDataset {
  std::vector<double> data;
  std::vector<std::size_t> shape;
  std::vector<std::size_t> splits;
};

void save_cache(const std::filesystem::path& stem, const CachedDataset& ds);
CachedDataset load_cache(const std::filesystem::path& stem);

}  // namespace nfm

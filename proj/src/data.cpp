#include "nfm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "nfm/error.hpp"

namespace nfm {

void SynthSpec::validate() const {
  if (classes == 0 || per_class == 0 || length < 2) throw Error("synth: classes, per_class and length must be positive");
  if (band_lo == 0 || band_lo > band_hi) throw Error("synth: band must satisfy 1 <= f_A <= f_B");
  if (band_hi >= nyquist()) {
    throw Error("synth: band upper edge " + std::to_string(band_hi) + " must lie below Nyquist " +
                std::to_string(nyquist()));
  }
  if (fixed > band_hi - band_lo + 1) throw Error("synth: more class frequencies than the band holds");
  if (random_max > nyquist()) throw Error("synth: random_max exceeds Nyquist");
  if (noise < 0.0) throw Error("synth: noise must be non-negative");
}

SynthData synth_generate(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t n = spec.length;
  const std::size_t rmax = spec.random_max == 0 ? spec.nyquist() : spec.random_max;

  SynthData out;
  out.length = n;
  out.signals.assign(spec.classes * spec.per_class * n, 0.0);
  out.labels.reserve(spec.classes * spec.per_class);

  const auto add_sine = [&](double* row, double f, double amp) {
    for (std::size_t t = 0; t < n; ++t) {
      const double tau = static_cast<double>(t) / static_cast<double>(n);
      row[t] += amp * std::sin(2.0 * std::numbers::pi * f * tau + spec.phase);
    }
  };

  for (std::size_t k = 0; k < spec.classes; ++k) {
    // partial Fisher-Yates over the band: draws without replacement
    std::vector<std::size_t> band(spec.band_hi - spec.band_lo + 1);
    for (std::size_t i = 0; i < band.size(); ++i) band[i] = spec.band_lo + i;
    for (std::size_t i = 0; i < spec.fixed; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(band.size() - 1)));
      std::swap(band[i], band[j]);
    }
    std::vector<std::size_t> freqs(band.begin(), band.begin() + static_cast<std::ptrdiff_t>(spec.fixed));
    std::vector<double> amps(spec.fixed);
    for (double& a : amps) a = rng.uniform();

    for (std::size_t m = 0; m < spec.per_class; ++m) {
      double* row = out.signals.data() + (k * spec.per_class + m) * n;
      for (std::size_t i = 0; i < spec.fixed; ++i) add_sine(row, static_cast<double>(freqs[i]), amps[i]);
      for (std::size_t j = 0; j < spec.random; ++j) {
        const double f = static_cast<double>(rng.uniform_int(1, static_cast<std::int64_t>(rmax)));
        add_sine(row, f, rng.uniform());
      }
      if (spec.noise > 0.0)
        for (std::size_t t = 0; t < n; ++t) row[t] += rng.normal(0.0, spec.noise);
      out.labels.push_back(static_cast<int>(k));
    }
    std::sort(freqs.begin(), freqs.end());
    out.class_freqs.push_back(std::move(freqs));
  }
  return out;
}

Series sines_series(std::size_t length, std::span<const double> periods, std::span<const double> amps, double noise,
                    Rng& rng) {
  if (periods.size() != amps.size()) throw Error("sines_series: periods and amplitudes differ in count");
  Series s;
  s.channels = 1;
  s.names = {"value"};
  s.data.assign(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < periods.size(); ++i) {
      s.data[t] += amps[i] * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / periods[i]);
    }
    if (noise > 0.0) s.data[t] += rng.normal(0.0, noise);
  }
  return s;
}

AnomalySeries inject_spikes(Series base, double ratio, std::size_t segment, double magnitude, Rng& rng) {
  const std::size_t len = base.length();
  if (segment == 0 || segment > len) throw Error("inject_spikes: bad segment length");
  AnomalySeries out;
  out.labels.assign(len, 0);
  const auto segments = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(len) / static_cast<double>(segment)));
  std::size_t placed = 0, attempts = 0;
  while (placed < segments && attempts < 100 * segments + 100) {
    ++attempts;
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(len - segment)));
    // keep a gap so segments never touch
    const std::size_t lo = start == 0 ? 0 : start - 1;
    const std::size_t hi = std::min(len, start + segment + 1);
    if (std::any_of(out.labels.begin() + static_cast<std::ptrdiff_t>(lo), out.labels.begin() + static_cast<std::ptrdiff_t>(hi),
                    [](int v) { return v != 0; }))
      continue;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (std::size_t t = start; t < start + segment; ++t) {
      out.labels[t] = 1;
      for (std::size_t c = 0; c < base.channels; ++c) base.data[t * base.channels + c] += sign * magnitude;
    }
    ++placed;
  }
  out.series = std::move(base);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    cells.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

Series load_csv(const std::filesystem::path& path, const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw Error("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("load_csv: " + path.string() + " is empty (header row required)");
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    rows.push_back(split_csv_line(line));
    if (rows.back().size() != header.size()) {
      throw Error("load_csv: row " + std::to_string(rows.size() + 1) + " has " + std::to_string(rows.back().size()) +
                  " cells, header has " + std::to_string(header.size()));
    }
  }
  if (rows.empty()) throw Error("load_csv: " + path.string() + " has no data rows");

  double dummy = 0.0;
  bool timestamp = header.size() > 1;
  if (timestamp) {
    timestamp = !parse_number(rows.front()[0], dummy);
  }

  std::vector<std::size_t> picked;
  if (columns.empty()) {
    for (std::size_t c = timestamp ? 1 : 0; c < header.size(); ++c) picked.push_back(c);
  } else {
    for (const std::string& name : columns) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw Error("load_csv: no column named '" + name + "'");
      picked.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  }
  if (picked.empty()) throw Error("load_csv: no channel columns");

  Series s;
  s.channels = picked.size();
  for (std::size_t c : picked) s.names.push_back(header[c]);
  s.data.reserve(rows.size() * picked.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c : picked) {
      double v = 0.0;
      if (!parse_number(rows[r][c], v)) {
        // rows counted from 1 with the header as row 1
        throw Error("load_csv: non-numeric cell '" + rows[r][c] + "' at row " + std::to_string(r + 2) + ", column " +
                    std::to_string(c + 1) + " (" + header[c] + ")");
      }
      s.data.push_back(v);
    }
  }
  return s;
}

WindowDataset make_windows(const Series& s, std::size_t n, std::size_t horizon, std::size_t stride,
                           const std::string& split) {
  if (n == 0 || stride == 0) throw Error("make_windows: window and stride must be positive");
  const std::size_t len = s.length();
  const std::size_t span = n + horizon;
  if (span > len) {
    throw Error("make_windows: window " + std::to_string(span) + " longer than " + (split.empty() ? "series" : split + " split") +
                " (" + std::to_string(len) + ")");
  }
  WindowDataset w;
  w.num = (len - span) / stride + 1;
  w.n = n;
  w.horizon = horizon;
  w.channels = s.channels;
  w.split = split;
  w.windows.reserve(w.num * n * s.channels);
  w.targets.reserve(w.num * span * s.channels);
  for (std::size_t i = 0; i < w.num; ++i) {
    const auto first = s.data.begin() + static_cast<std::ptrdiff_t>(i * stride * s.channels);
    w.windows.insert(w.windows.end(), first, first + static_cast<std::ptrdiff_t>(n * s.channels));
    w.targets.insert(w.targets.end(), first, first + static_cast<std::ptrdiff_t>(span * s.channels));
  }
  return w;
}

SplitSeries split_chronological(const Series& s, double train_ratio, double val_ratio) {
  if (train_ratio <= 0.0 || val_ratio < 0.0 || train_ratio + val_ratio > 1.0) {
    throw Error("split_chronological: ratios must be positive and sum to at most 1");
  }
  const std::size_t len = s.length();
  SplitSeries out;
  out.train_end = static_cast<std::size_t>(std::floor(train_ratio * static_cast<double>(len)));
  out.val_end = static_cast<std::size_t>(std::floor((train_ratio + val_ratio) * static_cast<double>(len)));
  const auto slice = [&](std::size_t a, std::size_t b) {
    Series p;
    p.channels = s.channels;
    p.names = s.names;
    p.data.assign(s.data.begin() + static_cast<std::ptrdiff_t>(a * s.channels),
                  s.data.begin() + static_cast<std::ptrdiff_t>(b * s.channels));
    return p;
  };
  out.train = slice(0, out.train_end);
  out.val = slice(out.train_end, out.val_end);
  out.test = slice(out.val_end, len);
  return out;
}

Standardizer Standardizer::fit(const Series& s) {
  const std::size_t len = s.length();
  if (len == 0) throw Error("standardize: empty series");
  Standardizer z;
  z.mean.assign(s.channels, 0.0);
  z.std.assign(s.channels, 0.0);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < s.channels; ++c) z.mean[c] += s.at(t, c);
  for (double& m : z.mean) m /= static_cast<double>(len);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < s.channels; ++c) {
      const double d = s.at(t, c) - z.mean[c];
      z.std[c] += d * d;
    }
  for (double& v : z.std) {
    v = std::sqrt(v / static_cast<double>(len));
    if (v == 0.0) v = 1.0;  // constant channel: only remove the mean
  }
  return z;
}

void Standardizer::apply(Series& s) const {
  if (s.channels != mean.size()) throw Error("standardize: channel count mismatch");
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    const std::size_t c = i % s.channels;
    s.data[i] = (s.data[i] - mean[c]) / std[c];
  }
}

void Standardizer::invert(std::span<double> data, std::size_t channels) const {
  if (channels != mean.size()) throw Error("standardize: channel count mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = data[i] * std[i % channels] + mean[i % channels];
}

// ---------------------------------------------------------------------------

void save_cache(const std::filesystem::path& stem, const CachedDataset& ds) {
  std::size_t total = 1;
  for (std::size_t d : ds.shape) total *= d;
  if (total != ds.data.size()) throw Error("save_cache: shape does not match data size");
  std::filesystem::path bin = stem, meta = stem;
  bin += ".bin";
  meta += ".json";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw Error("save_cache: cannot write " + bin.string());
    out.write(reinterpret_cast<const char*>(ds.data.data()), static_cast<std::streamsize>(ds.data.size() * sizeof(double)));
  }
  nlohmann::json j;
  j["dtype"] = "float64";
  j["byte_order"] = "little";
  j["shape"] = ds.shape;
  j["splits"] = ds.splits;
  std::ofstream out(meta);
  if (!out) throw Error("save_cache: cannot write " + meta.string());
  out << j.dump(2) << '\n';
}

CachedDataset load_cache(const std::filesystem::path& stem) {
  std::filesystem::path bin = stem, meta = stem;
  bin += ".bin";
  meta += ".json";
  std::ifstream min(meta);
  if (!min) throw Error("load_cache: cannot open " + meta.string());
  const nlohmann::json j = nlohmann::json::parse(min);
  if (j.at("dtype") != "float64") throw Error("load_cache: unsupported dtype");
  CachedDataset ds;
  ds.shape = j.at("shape").get<std::vector<std::size_t>>();
  ds.splits = j.value("splits", std::vector<std::size_t>{});
  std::size_t total = 1;
  for (std::size_t d : ds.shape) total *= d;
  ds.data.resize(total);
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error("load_cache: cannot open " + bin.string());
  in.read(reinterpret_cast<char*>(ds.data.data()), static_cast<std::streamsize>(total * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(total * sizeof(double))) throw Error("load_cache: truncated payload");
  return ds;
}

}  // namespace nfm

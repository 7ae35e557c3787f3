#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nfm/autodiff.hpp"
#include "nfm/rng.hpp"

namespace nfm {

struct InrConfig {
  std::size_t h0 = 32;        ///< Fourier-feature width (sin/cos pairs)
  std::size_t hidden = 32;    ///< width of the sine-activated layers
  std::size_t out_dim = 32;   ///< d
  std::size_t layers = 3;     ///< total weight layers, the last one linear
  double w0 = 30.0;
  double ff_scale = 128.0;    ///< std of the Fourier-feature frequencies

  void validate() const;
};

/// Equidistant grid of l locations on [-1, 1): tau_n = -1 + 2n/l. Refining
/// to 2l points and taking every second one reproduces this grid bit-exactly.
std::vector<double> time_grid(std::size_t l);

/// [l, 2 * freqs.size()] interleaved [sin(2 pi a_i tau), cos(2 pi a_i tau)].
std::vector<double> fourier_features(std::span<const double> tau, std::span<const double> freqs);

/// Coordinate network R -> R^d: frozen Fourier features followed by
/// sine-activated layers sin(w0 (W z + b)) and a final linear layer.
class Siren {
 public:
  Siren() = default;
  /// Registers `prefix.w{i}` / `prefix.b{i}` in the store and draws the
  /// frozen Fourier-feature frequencies.
  Siren(const InrConfig& config, ad::ParameterStore& store, const std::string& prefix, Rng& rng);

  /// phi(tau) as an [l, out_dim] tensor.
  ad::Var forward(ad::Tape& tape, std::span<const double> tau) const;

  const InrConfig& config() const { return config_; }
  std::span<const double> frequencies() const { return freqs_; }
  void set_frequencies(std::span<const double> freqs);
  std::size_t layer_count() const { return weights_.size(); }
  ad::Parameter& weight(std::size_t layer) { return *weights_.at(layer); }
  ad::Parameter& bias(std::size_t layer) { return *biases_.at(layer); }

 private:
  InrConfig config_;
  std::vector<double> freqs_;
  std::vector<ad::Parameter*> weights_;
  std::vector<ad::Parameter*> biases_;
};

/// Uniform(-sqrt(6/fan_in)/w0, +sqrt(6/fan_in)/w0), the SIREN hidden-layer bound.
double siren_bound(std::size_t fan_in, double w0);

}  // namespace nfm

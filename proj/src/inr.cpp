#include "nfm/inr.hpp"

#include <cmath>
#include <numbers>

#include "nfm/error.hpp"

namespace nfm {

void InrConfig::validate() const {
  if (h0 == 0 || h0 % 2 != 0) throw Error("inr: h0 must be a positive even number");
  if (hidden == 0 || out_dim == 0) throw Error("inr: layer widths must be >= 1");
  if (layers < 2) throw Error("inr: at least one hidden layer is required");
  if (!(w0 > 0.0)) throw Error("inr: w0 must be positive");
}

std::vector<double> time_grid(std::size_t l) {
  std::vector<double> tau(l);
  for (std::size_t n = 0; n < l; ++n) tau[n] = -1.0 + 2.0 * static_cast<double>(n) / static_cast<double>(l);
  return tau;
}

std::vector<double> fourier_features(std::span<const double> tau, std::span<const double> freqs) {
  const std::size_t h = freqs.size();
  std::vector<double> out(tau.size() * 2 * h);
  for (std::size_t n = 0; n < tau.size(); ++n) {
    for (std::size_t i = 0; i < h; ++i) {
      const double angle = 2.0 * std::numbers::pi * freqs[i] * tau[n];
      out[n * 2 * h + 2 * i] = std::sin(angle);
      out[n * 2 * h + 2 * i + 1] = std::cos(angle);
    }
  }
  return out;
}

double siren_bound(std::size_t fan_in, double w0) { return std::sqrt(6.0 / static_cast<double>(fan_in)) / w0; }

Siren::Siren(const InrConfig& config, ad::ParameterStore& store, const std::string& prefix, Rng& rng)
    : config_(config) {
  config_.validate();
  freqs_.resize(config_.h0 / 2);
  for (double& a : freqs_) a = rng.normal(0.0, config_.ff_scale);

  std::size_t fan_in = config_.h0;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const bool last = l + 1 == config_.layers;
    const std::size_t width = last ? config_.out_dim : config_.hidden;
    ad::Parameter& w = store.add(prefix + ".w" + std::to_string(l), {width, fan_in});
    ad::Parameter& b = store.add(prefix + ".b" + std::to_string(l), {width});
    const double bound = siren_bound(fan_in, config_.w0);
    for (double& v : w.value) v = rng.uniform(-bound, bound);
    weights_.push_back(&w);
    biases_.push_back(&b);
    fan_in = width;
  }
}

void Siren::set_frequencies(std::span<const double> freqs) {
  if (freqs.size() != freqs_.size()) throw Error("inr: frequency count mismatch");
  freqs_.assign(freqs.begin(), freqs.end());
}

ad::Var Siren::forward(ad::Tape& tape, std::span<const double> tau) const {
  ad::Var z = tape.constant({tau.size(), config_.h0}, fourier_features(tau, freqs_));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    z = ad::linear(z, tape.param(*weights_[l]), tape.param(*biases_[l]));
    if (l + 1 < weights_.size()) z = ad::sin(ad::scale(z, config_.w0));
  }
  return z;
}

}  // namespace nfm

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nfm/spectral.hpp"

namespace nfm {

/// Exact non-negative rational number, always stored in lowest terms.
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d = 1);

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  /// floor(this * k)
  std::int64_t floor_mul(std::int64_t k) const { return (num * k) / den; }
  bool is_integer() const { return den == 1; }
  std::string str() const;

  friend Rational operator*(Rational a, Rational b);
  friend Rational operator/(Rational a, Rational b);
  friend bool operator==(const Rational&, const Rational&) = default;
};

/// Timespan ratio (m_tau = T_y/T_x) and sampling-rate ratio (m_f = f_y/f_x).
struct ExtensionFactors {
  Rational m_tau{1};
  Rational m_f{1};

  /// Output length L = n * m_tau * m_f; throws "incompatible factors" when
  /// L is not a positive integer or either factor is below one.
  std::size_t output_length(std::size_t n) const;

  /// True when k -> floor(m_tau k) is injective over the n-point half spectrum.
  bool injective_for(std::size_t n) const;
};

/// Bin placement shared by the spectral API and the autodiff op.
struct ExtensionMap {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  double scale = 1.0;
  std::vector<std::size_t> target;  ///< target[k] = floor(m_tau k), k < K_N
};

ExtensionMap extension_map(std::size_t n, const ExtensionFactors& f);

/// Z[floor(m_tau k)] = m_tau m_f X[k] on a zero-initialized K_L spectrum.
/// Colliding targets resolve last-write-wins in ascending k. The DC and
/// Nyquist bins of the output are forced real.
Spectrum extend_spectrum(const Spectrum& x, const ExtensionFactors& f);

/// Band-limited resampling to length l: spectral zero-padding when l > n,
/// truncation to the first K_L bins when l < n, amplitude scaled by l/n.
std::vector<double> sinc_resample(std::span<const double> x, std::size_t l);

/// out[i] = x[i * factor]; factor must divide the length.
std::vector<double> decimate(std::span<const double> x, std::size_t factor);

}  // namespace nfm

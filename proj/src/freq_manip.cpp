#include "nfm/freq_manip.hpp"

#include <numeric>

#include "nfm/error.hpp"

namespace nfm {

Rational::Rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw Error("rational with zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
  num = g == 0 ? 0 : n / g;
  den = g == 0 ? 1 : d / g;
}

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

Rational operator*(Rational a, Rational b) { return Rational(a.num * b.num, a.den * b.den); }
Rational operator/(Rational a, Rational b) { return Rational(a.num * b.den, a.den * b.num); }

std::size_t ExtensionFactors::output_length(std::size_t n) const {
  if (m_tau.num < m_tau.den || m_f.num < m_f.den) throw Error("incompatible factors: m_tau and m_f must be >= 1");
  const Rational l = Rational(static_cast<std::int64_t>(n)) * m_tau * m_f;
  if (!l.is_integer() || l.num <= 0) {
    throw Error("incompatible factors: L = " + std::to_string(n) + " * " + m_tau.str() + " * " + m_f.str() +
                " is not an integer");
  }
  return static_cast<std::size_t>(l.num);
}

bool ExtensionFactors::injective_for(std::size_t n) const {
  std::int64_t prev = -1;
  for (std::size_t k = 0; k < half_bins(n); ++k) {
    const std::int64_t t = m_tau.floor_mul(static_cast<std::int64_t>(k));
    if (t == prev) return false;
    prev = t;
  }
  return true;
}

ExtensionMap extension_map(std::size_t n, const ExtensionFactors& f) {
  if (n == 0) throw Error("empty sequence");
  ExtensionMap map;
  map.n_in = n;
  map.n_out = f.output_length(n);
  map.scale = (f.m_tau * f.m_f).value();
  const std::size_t k_out = half_bins(map.n_out);
  map.target.resize(half_bins(n));
  for (std::size_t k = 0; k < map.target.size(); ++k) {
    const auto t = static_cast<std::size_t>(f.m_tau.floor_mul(static_cast<std::int64_t>(k)));
    if (t >= k_out) throw Error("incompatible factors: extension target outside output spectrum");
    map.target[k] = t;
  }
  return map;
}

Spectrum extend_spectrum(const Spectrum& x, const ExtensionFactors& f) {
  const ExtensionMap map = extension_map(x.n_time, f);
  Spectrum out;
  out.channels = x.channels;
  out.n_time = map.n_out;
  out.data.assign(out.bins() * out.channels, Complex{});
  for (std::size_t k = 0; k < map.target.size(); ++k) {
    for (std::size_t ch = 0; ch < x.channels; ++ch) out.at(map.target[k], ch) = map.scale * x.at(k, ch);
  }
  for (std::size_t ch = 0; ch < out.channels; ++ch) {
    out.at(0, ch).imag(0.0);
    if (out.n_time % 2 == 0) out.at(out.n_time / 2, ch).imag(0.0);
  }
  return out;
}

std::vector<double> sinc_resample(std::span<const double> x, std::size_t l) {
  const std::size_t n = x.size();
  if (n == 0) throw Error("empty sequence");
  if (l == 0) throw Error("sinc_resample: target length must be >= 1");
  if (l == n) return {x.begin(), x.end()};
  const Spectrum in = rfft(x);
  if (l > n) {
    ExtensionFactors f;
    f.m_f = Rational(static_cast<std::int64_t>(l), static_cast<std::int64_t>(n));
    return irfft(extend_spectrum(in, f));
  }
  Spectrum out;
  out.n_time = l;
  out.data.resize(out.bins());
  const double scale = static_cast<double>(l) / static_cast<double>(n);
  for (std::size_t k = 0; k < out.bins(); ++k) out.at(k) = scale * in.at(k);
  out.at(0).imag(0.0);
  if (l % 2 == 0) out.at(l / 2).imag(0.0);
  return irfft(out);
}

std::vector<double> decimate(std::span<const double> x, std::size_t factor) {
  if (factor == 0) throw Error("decimate: factor must be >= 1");
  if (x.size() % factor != 0) {
    throw Error("decimate: factor " + std::to_string(factor) + " does not divide length " + std::to_string(x.size()));
  }
  std::vector<double> out(x.size() / factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i * factor];
  return out;
}

}  // namespace nfm

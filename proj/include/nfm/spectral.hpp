#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace nfm {

using Complex = std::complex<double>;

/// Number of half-spectrum bins for a real sequence of length n.
constexpr std::size_t half_bins(std::size_t n) { return n / 2 + 1; }

/// Half-spectrum of a (multichannel) real sequence. Row-major [bins, channels].
struct Spectrum {
  std::vector<Complex> data;
  std::size_t channels = 1;
  std::size_t n_time = 0;

  std::size_t bins() const { return half_bins(n_time); }
  Complex& at(std::size_t k, std::size_t ch = 0) { return data[k * channels + ch]; }
  const Complex& at(std::size_t k, std::size_t ch = 0) const { return data[k * channels + ch]; }
};

namespace spectral {

/// In-place complex DFT of arbitrary length. sign = -1 is the forward
/// transform, +1 the unnormalized inverse. Mixed radix for small prime
/// factors, Bluestein otherwise.
void fft(std::span<Complex> data, int sign);

/// Forward real FFT: the first floor(n/2)+1 unnormalized DFT coefficients.
void rfft(std::span<const double> x, std::span<Complex> out);

/// Inverse real FFT of a half spectrum (carries the 1/n factor). Imaginary
/// parts of the DC and Nyquist bins are ignored.
void irfft(std::span<const Complex> half, std::span<double> out);

}  // namespace spectral

/// Half-spectrum of a single-channel sequence. Throws on empty input.
Spectrum rfft(std::span<const double> x);

/// Channel-wise half-spectrum of a row-major [n_time, channels] matrix.
Spectrum rfft(std::span<const double> x, std::size_t channels);

/// Real sequence (row-major [n_time, channels]) from a half spectrum.
/// Throws "non-realizable spectrum" if DC/Nyquist bins carry imaginary parts.
std::vector<double> irfft(const Spectrum& spectrum);

/// O(n^2) literal evaluation of the forward DFT; the oracle for rfft.
std::vector<Complex> naive_dft(std::span<const double> x);

}  // namespace nfm

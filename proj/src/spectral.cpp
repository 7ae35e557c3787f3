#include "nfm/spectral.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <unordered_map>

#include "nfm/error.hpp"

namespace nfm {
namespace spectral {
namespace {

constexpr std::size_t kMaxDirectPrime = 64;

Complex unit(double turns) {
  const double angle = 2.0 * std::numbers::pi * turns;
  return {std::cos(angle), std::sin(angle)};
}

/// Mixed-radix plan in the style of a decimation-in-time recursion. When
/// the length has a prime factor above kMaxDirectPrime the plan delegates to
/// Bluestein's chirp-z convolution on a power-of-two length.
class ComplexPlan {
 public:
  explicit ComplexPlan(std::size_t n) : n_(n) {
    std::size_t rest = n;
    std::size_t p = 4;
    while (rest > 1) {
      while (rest % p != 0) {
        if (p == 4) p = 2;
        else if (p == 2) p = 3;
        else p += 2;
        if (p * p > rest) p = rest;
      }
      rest /= p;
      factors_.push_back(p);
      factors_.push_back(rest);
    }
    std::size_t largest = 1;
    for (std::size_t i = 0; i < factors_.size(); i += 2) largest = std::max(largest, factors_[i]);

    if (largest > kMaxDirectPrime) {
      init_bluestein();
      return;
    }
    forward_.resize(n);
    inverse_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      forward_[i] = unit(-static_cast<double>(i) / static_cast<double>(n));
      inverse_[i] = std::conj(forward_[i]);
    }
    scratch_.resize(largest);
    buffer_.resize(n);
  }

  void execute(std::span<Complex> data, int sign) {
    if (n_ <= 1) return;
    if (bluestein_) {
      run_bluestein(data, sign);
      return;
    }
    std::copy(data.begin(), data.end(), buffer_.begin());
    const Complex* tw = sign < 0 ? forward_.data() : inverse_.data();
    work(data.data(), buffer_.data(), 1, factors_.data(), tw, sign);
  }

 private:
  void work(Complex* out, const Complex* in, std::size_t fstride, const std::size_t* factors,
            const Complex* tw, int sign) {
    const std::size_t p = factors[0];
    const std::size_t m = factors[1];
    Complex* const begin = out;
    Complex* const end = out + p * m;
    if (m == 1) {
      for (Complex* o = out; o != end; ++o, in += fstride) *o = *in;
    } else {
      for (Complex* o = out; o != end; o += m, in += fstride) work(o, in, fstride * p, factors + 2, tw, sign);
    }
    switch (p) {
      case 2: butterfly2(begin, fstride, m, tw); break;
      case 3: butterfly3(begin, fstride, m, tw); break;
      case 4: butterfly4(begin, fstride, m, tw, sign); break;
      case 5: butterfly5(begin, fstride, m, tw); break;
      default: butterfly_generic(begin, fstride, m, p, tw); break;
    }
  }

  static void butterfly2(Complex* out, std::size_t fstride, std::size_t m, const Complex* tw) {
    for (std::size_t k = 0; k < m; ++k) {
      const Complex t = out[m + k] * tw[k * fstride];
      out[m + k] = out[k] - t;
      out[k] += t;
    }
  }

  static void butterfly4(Complex* out, std::size_t fstride, std::size_t m, const Complex* tw, int sign) {
    for (std::size_t k = 0; k < m; ++k) {
      const Complex s0 = out[k + m] * tw[k * fstride];
      const Complex s1 = out[k + 2 * m] * tw[2 * k * fstride];
      const Complex s2 = out[k + 3 * m] * tw[3 * k * fstride];
      const Complex s5 = out[k] - s1;
      const Complex a = out[k] + s1;
      const Complex s3 = s0 + s2;
      const Complex s4 = s0 - s2;
      out[k + 2 * m] = a - s3;
      out[k] = a + s3;
      // multiply s4 by -i (forward) or +i (inverse)
      const Complex rot = sign < 0 ? Complex{s4.imag(), -s4.real()} : Complex{-s4.imag(), s4.real()};
      out[k + m] = s5 + rot;
      out[k + 3 * m] = s5 - rot;
    }
  }

  static void butterfly3(Complex* out, std::size_t fstride, std::size_t m, const Complex* tw) {
    const double e = tw[fstride * m].imag();
    for (std::size_t k = 0; k < m; ++k) {
      const Complex s1 = out[k + m] * tw[k * fstride];
      const Complex s2 = out[k + 2 * m] * tw[2 * k * fstride];
      const Complex s3 = s1 + s2;
      const Complex s0 = (s1 - s2) * e;
      const Complex mid = out[k] - s3 * 0.5;
      out[k] += s3;
      out[k + m] = {mid.real() - s0.imag(), mid.imag() + s0.real()};
      out[k + 2 * m] = {mid.real() + s0.imag(), mid.imag() - s0.real()};
    }
  }

  static void butterfly5(Complex* out, std::size_t fstride, std::size_t m, const Complex* tw) {
    const Complex ya = tw[fstride * m], yb = tw[2 * fstride * m];
    for (std::size_t k = 0; k < m; ++k) {
      const Complex s0 = out[k];
      const Complex s1 = out[k + m] * tw[k * fstride];
      const Complex s2 = out[k + 2 * m] * tw[2 * k * fstride];
      const Complex s3 = out[k + 3 * m] * tw[3 * k * fstride];
      const Complex s4 = out[k + 4 * m] * tw[4 * k * fstride];
      const Complex s7 = s1 + s4, s10 = s1 - s4, s8 = s2 + s3, s9 = s2 - s3;
      out[k] = s0 + s7 + s8;
      const Complex s5 = s0 + s7 * ya.real() + s8 * yb.real();
      const Complex s6{s10.imag() * ya.imag() + s9.imag() * yb.imag(), -s10.real() * ya.imag() - s9.real() * yb.imag()};
      out[k + m] = s5 - s6;
      out[k + 4 * m] = s5 + s6;
      const Complex s11 = s0 + s7 * yb.real() + s8 * ya.real();
      const Complex s12{-s10.imag() * yb.imag() + s9.imag() * ya.imag(), s10.real() * yb.imag() - s9.real() * ya.imag()};
      out[k + 2 * m] = s11 + s12;
      out[k + 3 * m] = s11 - s12;
    }
  }

  void butterfly_generic(Complex* out, std::size_t fstride, std::size_t m, std::size_t p, const Complex* tw) {
    for (std::size_t u = 0; u < m; ++u) {
      for (std::size_t q = 0, k = u; q < p; ++q, k += m) scratch_[q] = out[k];
      for (std::size_t q = 0, k = u; q < p; ++q, k += m) {
        std::size_t twidx = 0;
        Complex acc = scratch_[0];
        for (std::size_t j = 1; j < p; ++j) {
          twidx += fstride * k;
          if (twidx >= n_) twidx -= n_;
          acc += scratch_[j] * tw[twidx];
        }
        out[k] = acc;
      }
    }
  }

  void init_bluestein() {
    bluestein_ = true;
    std::size_t m = 1;
    while (m < 2 * n_ - 1) m <<= 1;
    conv_ = std::make_unique<ComplexPlan>(m);
    chirp_.resize(n_);
    const std::size_t wrap = 2 * n_;
    for (std::size_t i = 0; i < n_; ++i) {
      // n^2 mod 2n keeps the angle argument small and exact
      const std::size_t sq = (i * i) % wrap;
      chirp_[i] = unit(-0.5 * static_cast<double>(sq) / static_cast<double>(n_));
    }
    kernel_fwd_.assign(m, Complex{});
    for (std::size_t i = 0; i < n_; ++i) {
      kernel_fwd_[i] = std::conj(chirp_[i]);
      if (i > 0) kernel_fwd_[m - i] = std::conj(chirp_[i]);
    }
    kernel_inv_.resize(m);
    for (std::size_t i = 0; i < m; ++i) kernel_inv_[i] = std::conj(kernel_fwd_[i]);
    conv_->execute(kernel_fwd_, -1);
    conv_->execute(kernel_inv_, -1);
    work_.resize(m);
  }

  void run_bluestein(std::span<Complex> data, int sign) {
    const std::size_t m = work_.size();
    const auto& kernel = sign < 0 ? kernel_fwd_ : kernel_inv_;
    auto chirp = [&](std::size_t i) { return sign < 0 ? chirp_[i] : std::conj(chirp_[i]); };
    std::fill(work_.begin(), work_.end(), Complex{});
    for (std::size_t i = 0; i < n_; ++i) work_[i] = data[i] * chirp(i);
    conv_->execute(work_, -1);
    for (std::size_t i = 0; i < m; ++i) work_[i] *= kernel[i];
    conv_->execute(work_, +1);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < n_; ++i) data[i] = work_[i] * chirp(i) * inv_m;
  }

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<Complex> forward_, inverse_, scratch_, buffer_;

  bool bluestein_ = false;
  std::unique_ptr<ComplexPlan> conv_;
  std::vector<Complex> chirp_, kernel_fwd_, kernel_inv_, work_;
};

/// Real transforms of even length run through a half-length complex FFT.
struct RealPlan {
  explicit RealPlan(std::size_t n) : n(n) {
    if (n % 2 == 0) {
      twiddle.resize(n / 2 + 1);
      for (std::size_t k = 0; k <= n / 2; ++k) twiddle[k] = unit(-static_cast<double>(k) / static_cast<double>(n));
      buffer.resize(n / 2);
    } else {
      buffer.resize(n);
    }
  }
  std::size_t n;
  std::vector<Complex> twiddle;
  std::vector<Complex> buffer;
};

// Plans are cached per thread so the public functions share no mutable state.
ComplexPlan& complex_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<ComplexPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<ComplexPlan>(n);
  return *slot;
}

RealPlan& real_plan(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<RealPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealPlan>(n);
  return *slot;
}

}  // namespace

void fft(std::span<Complex> data, int sign) {
  if (data.empty()) return;
  complex_plan(data.size()).execute(data, sign);
}

void rfft(std::span<const double> x, std::span<Complex> out) {
  const std::size_t n = x.size();
  if (n == 0) throw Error("empty sequence");
  if (out.size() != half_bins(n)) throw Error("rfft: output size must be floor(n/2)+1");
  RealPlan& plan = real_plan(n);
  if (n % 2 != 0) {
    for (std::size_t i = 0; i < n; ++i) plan.buffer[i] = {x[i], 0.0};
    fft(plan.buffer, -1);
    std::copy_n(plan.buffer.begin(), out.size(), out.begin());
    return;
  }
  const std::size_t m = n / 2;
  for (std::size_t i = 0; i < m; ++i) plan.buffer[i] = {x[2 * i], x[2 * i + 1]};
  fft(plan.buffer, -1);
  for (std::size_t k = 0; k <= m; ++k) {
    const Complex zk = plan.buffer[k % m];
    const Complex zr = std::conj(plan.buffer[(m - k) % m]);
    const Complex even = 0.5 * (zk + zr);
    const Complex odd = Complex{0.0, -0.5} * (zk - zr);
    out[k] = even + plan.twiddle[k] * odd;
  }
  out[0].imag(0.0);
  out[m].imag(0.0);
}

void irfft(std::span<const Complex> half, std::span<double> out) {
  const std::size_t n = out.size();
  if (n == 0) throw Error("empty sequence");
  if (half.size() != half_bins(n)) throw Error("irfft: spectrum size must be floor(n/2)+1");
  RealPlan& plan = real_plan(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  if (n % 2 != 0) {
    plan.buffer[0] = {half[0].real(), 0.0};
    for (std::size_t k = 1; k < half.size(); ++k) {
      plan.buffer[k] = half[k];
      plan.buffer[n - k] = std::conj(half[k]);
    }
    fft(plan.buffer, +1);
    for (std::size_t i = 0; i < n; ++i) out[i] = plan.buffer[i].real() * inv_n;
    return;
  }
  const std::size_t m = n / 2;
  auto bin = [&](std::size_t k) {
    if (k == 0 || k == m) return Complex{half[k].real(), 0.0};
    return half[k];
  };
  for (std::size_t k = 0; k < m; ++k) {
    const Complex xk = bin(k);
    const Complex xr = std::conj(bin(m - k));
    const Complex even = 0.5 * (xk + xr);
    const Complex odd = 0.5 * (xk - xr) * std::conj(plan.twiddle[k]);
    plan.buffer[k] = even + Complex{0.0, 1.0} * odd;
  }
  fft(plan.buffer, +1);
  // the half-length inverse carries 1/m; the full transform needs 1/n = 1/(2m)
  const double scale = 2.0 * inv_n;
  for (std::size_t i = 0; i < m; ++i) {
    out[2 * i] = plan.buffer[i].real() * scale;
    out[2 * i + 1] = plan.buffer[i].imag() * scale;
  }
}

}  // namespace spectral

Spectrum rfft(std::span<const double> x) { return rfft(x, 1); }

Spectrum rfft(std::span<const double> x, std::size_t channels) {
  if (x.empty()) throw Error("empty sequence");
  if (channels == 0 || x.size() % channels != 0) throw Error("rfft: data size is not a multiple of channels");
  const std::size_t n = x.size() / channels;
  Spectrum s;
  s.channels = channels;
  s.n_time = n;
  s.data.resize(half_bins(n) * channels);
  std::vector<double> column(n);
  std::vector<Complex> bins(half_bins(n));
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t i = 0; i < n; ++i) column[i] = x[i * channels + ch];
    spectral::rfft(column, bins);
    for (std::size_t k = 0; k < bins.size(); ++k) s.at(k, ch) = bins[k];
  }
  return s;
}

std::vector<double> irfft(const Spectrum& spectrum) {
  const std::size_t n = spectrum.n_time;
  const std::size_t ch_count = spectrum.channels;
  if (n == 0 || ch_count == 0) throw Error("empty sequence");
  if (spectrum.data.size() != spectrum.bins() * ch_count) throw Error("irfft: spectrum shape does not match n_time");

  double scale = 1.0;
  for (const Complex& c : spectrum.data) scale = std::max(scale, std::abs(c));
  const double tol = 1e-9 * scale;
  for (std::size_t ch = 0; ch < ch_count; ++ch) {
    if (std::abs(spectrum.at(0, ch).imag()) > tol) throw Error("non-realizable spectrum");
    if (n % 2 == 0 && std::abs(spectrum.at(n / 2, ch).imag()) > tol) throw Error("non-realizable spectrum");
  }

  std::vector<double> out(n * ch_count);
  std::vector<Complex> bins(spectrum.bins());
  std::vector<double> column(n);
  for (std::size_t ch = 0; ch < ch_count; ++ch) {
    for (std::size_t k = 0; k < bins.size(); ++k) bins[k] = spectrum.at(k, ch);
    spectral::irfft(bins, column);
    for (std::size_t i = 0; i < n; ++i) out[i * ch_count + ch] = column[i];
  }
  return out;
}

std::vector<Complex> naive_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw Error("empty sequence");
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc{};
    for (std::size_t t = 0; t < n; ++t) {
      // reduce k*t modulo n before forming the angle
      const double turns = static_cast<double>((k * t) % n) / static_cast<double>(n);
      const double angle = -2.0 * std::numbers::pi * turns;
      acc += x[t] * Complex{std::cos(angle), std::sin(angle)};
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace nfm

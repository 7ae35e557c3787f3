#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "nfm/error.hpp"
#include "nfm/freq_manip.hpp"

using nfm::Complex;
using nfm::ExtensionFactors;
using nfm::Rational;
using testing::max_abs_diff;

namespace {

// random signal whose spectrum vanishes at and above bin `keep`
std::vector<double> band_limited(std::size_t n, std::size_t keep, std::uint64_t seed) {
  nfm::Rng rng(seed);
  nfm::Spectrum s;
  s.n_time = n;
  s.data.assign(s.bins(), Complex{});
  s.data[0] = rng.normal();
  for (std::size_t k = 1; k < keep; ++k) s.data[k] = {rng.normal(), rng.normal()};
  return nfm::irfft(s);
}

ExtensionFactors factors(Rational m_tau, Rational m_f) {
  ExtensionFactors f;
  f.m_tau = m_tau;
  f.m_f = m_f;
  return f;
}

}  // namespace

TEST_CASE("rational arithmetic") {
  CHECK(Rational(6, 4) == Rational(3, 2));
  CHECK(Rational(6, 4).str() == "3/2");
  CHECK((Rational(3, 2) * Rational(4, 3)).str() == "2");
  CHECK(Rational(5, 4).floor_mul(7) == 8);
  CHECK_THROWS_AS(Rational(1, 0), nfm::Error);
}

TEST_CASE("extend_spectrum: zero-padding") {
  nfm::Spectrum x;
  x.n_time = 4;
  x.data = {1.0, Complex(2, 3), 4.0};
  const nfm::Spectrum z = nfm::extend_spectrum(x, factors(1, 2));
  CHECK(z.n_time == 8);
  CHECK(max_abs_diff(z.data, std::vector<Complex>{2.0, Complex(4, 6), 8.0, 0.0, 0.0}) < 1e-15);
}

TEST_CASE("extend_spectrum: identity factors") {
  const auto x = testing::randn(9, 1);
  const nfm::Spectrum s = nfm::rfft(x);
  CHECK(max_abs_diff(nfm::extend_spectrum(s, factors(1, 1)).data, s.data) < 1e-15);
}

TEST_CASE("extend_spectrum: interleaving repeats the sequence") {
  const nfm::Spectrum z = nfm::extend_spectrum(nfm::rfft(std::vector<double>{1, 2}), factors(2, 1));
  CHECK(max_abs_diff(z.data, std::vector<Complex>{6.0, 0.0, -2.0}) < 1e-14);
  CHECK(max_abs_diff(nfm::irfft(z), std::vector<double>{1, 2, 1, 2}) < 1e-14);

  for (std::size_t n = 1; n <= 32; ++n) {
    for (std::int64_t m = 1; m <= 4; ++m) {
      const auto x = testing::randn(n, n * 10 + static_cast<std::uint64_t>(m));
      const auto y = nfm::irfft(nfm::extend_spectrum(nfm::rfft(x), factors(m, 1)));
      std::vector<double> tiled;
      for (std::int64_t r = 0; r < m; ++r) tiled.insert(tiled.end(), x.begin(), x.end());
      CHECK_MESSAGE(max_abs_diff(y, tiled) < 1e-9, "n = " << n << ", m = " << m);
    }
  }
}

TEST_CASE("extend_spectrum with m_tau = 1 is sinc resampling") {
  for (std::size_t n : {6u, 7u, 16u}) {
    const auto x = testing::randn(n, n);
    for (std::int64_t m = 2; m <= 3; ++m) {
      const auto a = nfm::irfft(nfm::extend_spectrum(nfm::rfft(x), factors(1, m)));
      const auto b = nfm::sinc_resample(x, n * static_cast<std::size_t>(m));
      CHECK(max_abs_diff(a, b) < 1e-12);
    }
  }
}

TEST_CASE("extend_spectrum: forecasting factors are injective") {
  for (std::size_t n : {96u, 128u, 336u, 720u}) {
    for (std::size_t h : {24u, 96u, 192u}) {
      if (h >= n) continue;
      const ExtensionFactors f = factors(Rational(static_cast<std::int64_t>(n + h), static_cast<std::int64_t>(n)), 1);
      CHECK(f.injective_for(n));
      CHECK(f.output_length(n) == n + h);
    }
  }
  // a collision exists once m_tau < 1 would be needed; with m_tau = 1 there is none
  CHECK(factors(1, 1).injective_for(10));
}

TEST_CASE("extend_spectrum: incompatible factors") {
  nfm::Spectrum x = nfm::rfft(testing::randn(5, 1));
  CHECK_THROWS_WITH_AS(nfm::extend_spectrum(x, factors(Rational(3, 2), 1)), doctest::Contains("incompatible factors"),
                       nfm::Error);
  CHECK_THROWS_WITH_AS(nfm::extend_spectrum(x, factors(Rational(1, 2), 1)), doctest::Contains("incompatible factors"),
                       nfm::Error);
}

TEST_CASE("sinc_resample examples") {
  const auto x = testing::randn(11, 3);
  CHECK(nfm::sinc_resample(x, 11) == x);

  const std::vector<double> c(7, 2.5);
  for (std::size_t l : {3u, 7u, 20u}) {
    const auto y = nfm::sinc_resample(c, l);
    CHECK(y.size() == l);
    CHECK(max_abs_diff(y, std::vector<double>(l, 2.5)) < 1e-12);
  }

  std::vector<double> coarse(16), fine(32);
  for (std::size_t n = 0; n < 16; ++n) coarse[n] = std::sin(2 * std::numbers::pi * 3 * n / 16.0);
  for (std::size_t n = 0; n < 32; ++n) fine[n] = std::sin(2 * std::numbers::pi * 3 * n / 32.0);
  CHECK(max_abs_diff(nfm::sinc_resample(coarse, 32), fine) < 1e-9);
  CHECK(max_abs_diff(nfm::sinc_resample(fine, 16), coarse) < 1e-9);
}

TEST_CASE("sinc_resample composes for band-limited input") {
  const std::size_t n = 24;
  const auto x = band_limited(n, 8, 2);
  const auto twice = nfm::sinc_resample(nfm::sinc_resample(x, 2 * n), 4 * n);
  CHECK(max_abs_diff(twice, nfm::sinc_resample(x, 4 * n)) < 1e-9);
}

TEST_CASE("decimation inverts band-limited upsampling") {
  for (std::size_t m = 2; m <= 4; ++m) {
    const auto x = band_limited(20, 9, m);
    CHECK(max_abs_diff(nfm::decimate(nfm::sinc_resample(x, m * 20), m), x) < 1e-9);
  }
}

TEST_CASE("decimate examples and errors") {
  const std::vector<double> x{0, 1, 2, 3, 4, 5, 6, 7};
  CHECK(nfm::decimate(x, 2) == std::vector<double>{0, 2, 4, 6});
  CHECK(nfm::decimate(x, 1) == x);
  CHECK(nfm::decimate(x, 4) == std::vector<double>{0, 4});
  CHECK_THROWS_WITH_AS(nfm::decimate(x, 3), doctest::Contains("does not divide"), nfm::Error);
  CHECK_THROWS_AS(nfm::decimate(x, 0), nfm::Error);
}

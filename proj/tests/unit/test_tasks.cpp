#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "nfm/error.hpp"
#include "nfm/tasks.hpp"

namespace ad = nfm::ad;
using ad::Tape;
using ad::Var;

namespace {

double scalar(Var v) { return v.value()[0]; }

}  // namespace

TEST_CASE("focal frequency loss examples") {
  Tape t(false);
  const auto y = testing::randn(2 * 12 * 3, 1);
  CHECK(scalar(nfm::focal_freq_loss(t.constant({2, 12, 3}, y), t.constant({2, 12, 3}, y))) == 0.0);

  std::vector<double> impulse(4, 0.0);
  impulse[0] = 1.0;
  CHECK(scalar(nfm::focal_freq_loss(t.constant({1, 4, 1}, impulse), t.constant({1, 4, 1}, 0.0))) ==
        doctest::Approx(1.0).epsilon(1e-15));

  // jointly shifting both signals leaves the loss unchanged
  const std::size_t n = 10;
  const auto a = testing::randn(n, 2), b = testing::randn(n, 3);
  std::vector<double> as(n), bs(n);
  for (std::size_t i = 0; i < n; ++i) {
    as[(i + 3) % n] = a[i];
    bs[(i + 3) % n] = b[i];
  }
  const double base = scalar(nfm::focal_freq_loss(t.constant({1, n, 1}, a), t.constant({1, n, 1}, b)));
  const double shifted = scalar(nfm::focal_freq_loss(t.constant({1, n, 1}, as), t.constant({1, n, 1}, bs)));
  CHECK(shifted == doctest::Approx(base).epsilon(1e-12));

  CHECK_THROWS_AS(nfm::focal_freq_loss(t.constant({1, 4, 1}, 0.0), t.constant({1, 5, 1}, 0.0)), nfm::Error);
}

TEST_CASE("composite losses") {
  Tape t(false);
  const auto yh = testing::randn(2 * 16 * 2, 4), y = testing::randn(2 * 16 * 2, 5);
  Var a = t.constant({2, 16, 2}, yh), b = t.constant({2, 16, 2}, y);
  const double mse = scalar(nfm::mse_loss(a, b));
  const double ffl = scalar(nfm::focal_freq_loss(a, b));

  CHECK(scalar(nfm::forecast_loss(b, b, 0.5)) == 0.0);
  CHECK(scalar(nfm::anomaly_loss(b, b, 0.5)) == 0.0);
  CHECK(scalar(nfm::forecast_loss(a, b, 1.0)) == doctest::Approx(mse).epsilon(1e-15));
  CHECK(scalar(nfm::forecast_loss(a, b, 0.0)) == doctest::Approx(ffl).epsilon(1e-15));
  CHECK(scalar(nfm::anomaly_loss(a, b, 0.5)) == doctest::Approx(0.5 * mse + 0.5 * ffl).epsilon(1e-15));

  // positive away from equality, even for a tiny perturbation
  auto near = y;
  near[7] += 1e-9;
  CHECK(scalar(nfm::forecast_loss(t.constant({2, 16, 2}, near), b, 0.5)) > 0.0);
  CHECK(scalar(nfm::forecast_loss(a, b, 0.5)) >= 0.0);
}

TEST_CASE("composite losses pass grad_check") {
  ad::ParameterStore store;
  auto& p = store.add("yhat", {2, 9, 2});
  p.value = testing::randn(36, 6);
  const auto y = testing::randn(36, 7);
  std::vector<ad::Parameter*> ps{&p};
  CHECK(ad::grad_check([&](Tape& t) { return nfm::forecast_loss(t.param(p), t.constant({2, 9, 2}, y), 0.5); }, ps) <
        1e-4);
  CHECK(ad::grad_check([&](Tape& t) { return nfm::anomaly_loss(t.param(p), t.constant({2, 9, 2}, y), 0.3); }, ps) <
        1e-4);
  CHECK(ad::grad_check([&](Tape& t) { return nfm::focal_freq_loss(t.param(p), t.constant({2, 9, 2}, y)); }, ps) <
        1e-4);
}

TEST_CASE("classification head") {
  Tape t(false);
  // uniform logits on 10 classes
  Var z = t.constant({3, 5, 4}, testing::randn(60, 8));
  Var w = t.constant({10, 4}, 0.0), b = t.constant({10}, 0.0);
  const std::vector<int> labels{0, 4, 9};
  CHECK(scalar(ad::softmax_cross_entropy(nfm::classify_head(z, w, b), labels)) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-14));

  // pooling a constant sequence returns that constant
  std::vector<double> eye(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  Var id = t.constant({4, 4}, eye), zero = t.constant({4}, 0.0);
  std::vector<double> cst(1 * 7 * 4);
  for (std::size_t l = 0; l < 7; ++l)
    for (std::size_t c = 0; c < 4; ++c) cst[l * 4 + c] = 0.5 + static_cast<double>(c);
  Var pooled = nfm::classify_head(t.constant({1, 7, 4}, cst), id, zero);
  for (std::size_t c = 0; c < 4; ++c) CHECK(pooled.value()[c] == doctest::Approx(0.5 + static_cast<double>(c)));

  // logits do not depend on the order of positions
  const auto zv = testing::randn(2 * 6 * 4, 9);
  std::vector<double> zp(zv.size());
  const std::size_t perm[6] = {3, 0, 5, 1, 4, 2};
  for (std::size_t bb = 0; bb < 2; ++bb)
    for (std::size_t l = 0; l < 6; ++l)
      for (std::size_t c = 0; c < 4; ++c) zp[(bb * 6 + l) * 4 + c] = zv[(bb * 6 + perm[l]) * 4 + c];
  Var wr = t.constant({3, 4}, testing::randn(12, 10)), br = t.constant({3}, testing::randn(3, 11));
  Var l1 = nfm::classify_head(t.constant({2, 6, 4}, zv), wr, br);
  Var l2 = nfm::classify_head(t.constant({2, 6, 4}, zp), wr, br);
  CHECK(testing::max_abs_diff(l1.value(), l2.value()) < 1e-14);
}

TEST_CASE("instance normalization round trip") {
  const std::size_t batch = 3, len = 20, ch = 2;
  auto x = testing::randn(batch * len * ch, 12);
  for (double& v : x) v = 3.0 * v + 7.0;
  for (auto mode : {nfm::NormMode::RevIN, nfm::NormMode::MeanOnly, nfm::NormMode::None}) {
    CAPTURE(nfm::to_string(mode));
    const auto nx = nfm::norm_apply(x, batch, ch, mode);
    CHECK(testing::max_abs_diff(nfm::norm_invert(nx.data, nx.stats), x) < 1e-9);

    // a constant shift is absorbed by the mean
    auto shifted = x;
    for (double& v : shifted) v += 42.0;
    const auto ns = nfm::norm_apply(shifted, batch, ch, mode);
    if (mode != nfm::NormMode::None) CHECK(testing::max_abs_diff(ns.data, nx.data) < 1e-9);

    // graph version agrees with the array version on a longer output grid
    Tape t(false);
    const auto y = testing::randn(batch * 30 * ch, 13);
    Var g = nfm::norm_invert(t.constant({batch, 30, ch}, y), nx.stats);
    CHECK(testing::max_abs_diff(g.value(), nfm::norm_invert(y, nx.stats)) < 1e-12);
  }

  const auto revin = nfm::norm_apply(x, batch, ch, nfm::NormMode::RevIN);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t l = 0; l < len; ++l) m += revin.data[(b * len + l) * ch + c];
      m /= len;
      for (std::size_t l = 0; l < len; ++l) v += std::pow(revin.data[(b * len + l) * ch + c] - m, 2);
      CHECK(std::abs(m) < 1e-12);
      CHECK(v / len == doctest::Approx(1.0).epsilon(1e-5));
    }

  // constant channel: mean-only gives zeros, RevIN stays finite through the eps guard
  std::vector<double> flat(10, 5.0);
  for (double v : nfm::norm_apply(flat, 1, 1, nfm::NormMode::MeanOnly).data) CHECK(v == 0.0);
  for (double v : nfm::norm_apply(flat, 1, 1, nfm::NormMode::RevIN).data) CHECK(v == 0.0);

  CHECK_THROWS_AS(nfm::norm_apply(std::vector<double>(7, 0.0), 2, 1, nfm::NormMode::RevIN), nfm::Error);
}

TEST_CASE("task extension factors") {
  nfm::TaskSpec f;
  f.kind = nfm::TaskKind::Forecast;
  f.horizon = 96;
  CHECK(f.factors(96).m_tau == nfm::Rational(2));
  CHECK(f.factors(96).m_f == nfm::Rational(1));
  nfm::TaskSpec a;
  a.kind = nfm::TaskKind::Anomaly;
  a.downsample = 2;
  CHECK(a.factors(50).m_f == nfm::Rational(2));
  CHECK(a.factors(50).m_tau == nfm::Rational(1));
  CHECK(nfm::TaskSpec{}.factors(2000).m_tau == nfm::Rational(1));
  CHECK(nfm::parse_task_kind("forecast") == nfm::TaskKind::Forecast);
  CHECK(nfm::parse_norm_mode(nfm::to_string(nfm::NormMode::MeanOnly)) == nfm::NormMode::MeanOnly);
  CHECK_THROWS_AS(nfm::parse_task_kind("regress"), nfm::Error);
}

TEST_CASE("anomaly scoring, thresholds and point adjustment") {
  const std::vector<double> x{1, 2, 3, 4}, xh{1, 0, 3, 2};
  const auto s = nfm::anomaly_score(x, xh, 2);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == 2.0);
  CHECK(s[1] == 2.0);

  const std::vector<double> pool{4, 1, 3, 2};
  CHECK(nfm::threshold_by_ratio(pool, 50.0) == doctest::Approx(2.5));
  CHECK(nfm::threshold_by_ratio(pool, 0.0) == 4.0);
  CHECK(nfm::threshold_by_ratio(pool, 100.0) == 1.0);
  CHECK_THROWS_WITH_AS(nfm::threshold_by_ratio(std::vector<double>{}, 1.0), "threshold_by_ratio: empty score pool",
                       nfm::Error);

  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 1, 0, 0, 1};
  const std::vector<int> pred{0, 1, 0, 0, 1, 0, 0, 0, 0, 0};
  const auto adj = nfm::point_adjust(pred, truth);
  CHECK(adj == std::vector<int>{0, 1, 0, 1, 1, 1, 1, 0, 0, 0});

  const auto raw = nfm::detection_metrics(pred, truth);
  const auto after = nfm::detection_metrics(adj, truth);
  CHECK(after.recall >= raw.recall);
  CHECK(after.true_positive == 4);
  CHECK(after.false_positive == 1);
  CHECK(after.false_negative == 1);
  CHECK(after.precision == doctest::Approx(0.8));
  CHECK(after.recall == doctest::Approx(0.8));
  CHECK(after.f1 == doctest::Approx(0.8));

  const std::vector<int> none(truth.size(), 0);
  const auto m0 = nfm::detection_metrics(nfm::point_adjust(none, truth), truth);
  CHECK(m0.precision == 0.0);
  CHECK(m0.recall == 0.0);
  CHECK(m0.f1 == 0.0);

  // point adjustment never lowers recall
  nfm::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> p(40), tr(40);
    for (auto& v : p) v = rng.uniform() < 0.1;
    for (auto& v : tr) v = rng.uniform() < 0.3;
    CHECK(nfm::detection_metrics(nfm::point_adjust(p, tr), tr).recall >= nfm::detection_metrics(p, tr).recall);
  }
}

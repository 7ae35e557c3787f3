#include <chrono>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "nfm/error.hpp"
#include "nfm/harness.hpp"
#include "nfm/model.hpp"

namespace ad = nfm::ad;
using ad::Tape;
using ad::Var;
using testing::max_abs_diff;

namespace {

nfm::ModelConfig small(std::size_t c = 2, std::size_t d = 6) {
  nfm::ModelConfig m;
  m.channels = c;
  m.hidden = d;
  m.blocks = 1;
  m.h0 = 8;
  m.inr_hidden = 8;
  m.proj_width = 8;
  m.ff_scale = 4.0;
  return m;
}

void zero(nfm::NfmModel& model, const std::string& name) {
  auto& p = model.params().get(name);
  std::fill(p.value.begin(), p.value.end(), 0.0);
}

std::vector<double> values(Var v) { return {v.value().begin(), v.value().end()}; }

nfm::ExtensionFactors factors(nfm::Rational m_tau, nfm::Rational m_f) {
  nfm::ExtensionFactors f;
  f.m_tau = m_tau;
  f.m_f = m_f;
  return f;
}

// band-limited multichannel batch [b, n, c]: content only below bin `keep`
std::vector<double> smooth_batch(std::size_t b, std::size_t n, std::size_t c, std::size_t keep, std::uint64_t seed) {
  nfm::Rng rng(seed);
  std::vector<double> x(b * n * c, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 1; k < keep; ++k) {
        const double a = rng.normal(), p = rng.uniform(0.0, 6.283);
        for (std::size_t t = 0; t < n; ++t)
          x[(i * n + t) * c + ch] += a * std::cos(6.283185307179586 * k * t / n + p);
      }
  return x;
}

nfm::ModelConfig table_config(const std::string& task) {
  nfm::ModelConfig m;
  m.channels = 1;
  if (task == "forecast") {
    m.hidden = 36;
  } else if (task == "anomaly") {
    m.hidden = 8;
    m.h0 = 16;
  } else {
    m.hidden = 32;
    m.blocks = 2;
    m.head = nfm::HeadKind::Pooled;
    m.out_dim = 10;
  }
  return m;
}

}  // namespace

TEST_CASE("parameter counts match the reported sizes") {
  const std::pair<const char*, double> cases[] = {{"forecast", 27000}, {"anomaly", 6600}, {"classify", 37000}};
  for (const auto& [task, reported] : cases) {
    const auto count = static_cast<double>(nfm::param_count(table_config(task)));
    CHECK_MESSAGE(std::abs(count - reported) / reported <= 0.2, task << ": " << count);
  }
}

TEST_CASE("parameter count does not depend on the horizon") {
  nfm::NfmModel model(table_config("forecast"), 0);
  for (std::size_t h : {96u, 720u}) {
    nfm::TaskSpec task;
    task.kind = nfm::TaskKind::Forecast;
    task.horizon = h;
    Tape t(false);
    const std::size_t n = 96;
    Var x = t.constant({1, n, 1}, testing::randn(n, h));
    Var y = model.forward(t, x, task.factors(n), {});
    CHECK(y.dim(1) == n + h);
    CHECK(model.param_count() == nfm::param_count(table_config("forecast")));
  }
}

TEST_CASE("backbone shapes") {
  nfm::NfmModel model(small(), 1);
  Tape t(false);
  Var x = t.constant({3, 10, 2}, testing::randn(60, 1));
  CHECK(model.backbone(t, x, factors(1, 1), {}).shape() == ad::Shape{3, 10, 6});
  CHECK(model.backbone(t, x, factors(nfm::Rational(3, 2), 1), {}).shape() == ad::Shape{3, 15, 6});
  CHECK(model.backbone(t, x, factors(1, 2), {}).shape() == ad::Shape{3, 20, 6});
  CHECK(model.forward(t, x, factors(1, 1), {}).shape() == ad::Shape{3, 10, 1});
  CHECK_THROWS_AS(model.backbone(t, x, factors(nfm::Rational(5, 4), 1), {}), nfm::Error);
  Var wrong = t.constant({3, 10, 3}, 0.0);
  CHECK_THROWS_AS(model.forward(t, wrong, factors(1, 1), {}), nfm::Error);
}

TEST_CASE("input projection") {
  nfm::NfmModel model(small(), 2);
  Tape t(false);
  const auto x = testing::randn(8 * 2, 3);
  Var y = model.input_projection(t, t.constant({1, 8, 2}, x), {});
  // pointwise: reversing time reverses the output
  std::vector<double> rev(x.size());
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t c = 0; c < 2; ++c) rev[(7 - n) * 2 + c] = x[n * 2 + c];
  Var yr = model.input_projection(t, t.constant({1, 8, 2}, rev), {});
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t j = 0; j < 6; ++j) CHECK(yr.value()[(7 - n) * 6 + j] == y.value()[n * 6 + j]);

  for (const char* name : {"proj.linear", "proj.w1", "proj.b1", "proj.w2"}) zero(model, name);
  for (double v : values(model.input_projection(t, t.constant({1, 8, 2}, x), {}))) CHECK(v == 0.0);
}

TEST_CASE("LFT with a zeroed prior") {
  nfm::NfmModel model(small(), 3);
  zero(model, "lft.phi.w2");
  zero(model, "lft.phi.b2");
  Tape t(false);
  Var xbar = t.constant({2, 12, 6}, testing::randn(2 * 12 * 6, 4));

  const nfm::EmbeddingState same = model.lft(t, xbar, factors(1, 1));
  CHECK(max_abs_diff(values(same.z0), values(xbar)) < 1e-12);

  const nfm::EmbeddingState up = model.lft(t, xbar, factors(1, 2));
  CHECK(up.length == 24);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 6; ++j) {
      std::vector<double> col(12), out(24);
      for (std::size_t n = 0; n < 12; ++n) col[n] = xbar.value()[(b * 12 + n) * 6 + j];
      for (std::size_t n = 0; n < 24; ++n) out[n] = up.z0.value()[(b * 24 + n) * 6 + j];
      CHECK(max_abs_diff(out, nfm::sinc_resample(col, 24)) < 1e-12);
    }
}

TEST_CASE("LFT tokens are shared across the batch") {
  nfm::NfmModel model(small(), 4);
  Tape t(false);
  const auto a = testing::randn(10 * 6, 1);
  std::vector<double> batch(a);
  batch.insert(batch.end(), a.begin(), a.end());
  std::fill(batch.begin() + 60, batch.end(), 0.0);
  const nfm::EmbeddingState s = model.lft(t, t.constant({2, 10, 6}, batch), factors(1, 1));
  CHECK(s.tokens.shape() == ad::Shape{6, 6, 2});
  // the second item is all zero, so its spectrum is exactly V
  const std::size_t per = 6 * 6 * 2;
  for (std::size_t i = 0; i < per; ++i) CHECK(s.spectrum.value()[per + i] == doctest::Approx(s.tokens.value()[i]));
}

TEST_CASE("INFF identity and zero filters") {
  nfm::NfmModel model(small(), 5);
  Tape t(false);
  Var x = t.constant({2, 10, 2}, testing::randn(40, 6));
  const nfm::EmbeddingState s = model.lft(t, model.input_projection(t, x, {}), factors(1, 1));
  Var z = t.constant({2, 10, 6}, testing::randn(120, 7));

  zero(model, "block0.inff.w2");
  zero(model, "block0.inff.b2");
  for (double v : values(model.inff(t, z, s, 0))) CHECK(std::abs(v) < 1e-15);

  auto& b2 = model.params().get("block0.inff.b2");
  for (std::size_t j = 0; j < 6; ++j) b2.value[j * 2] = 1.0;
  CHECK(max_abs_diff(values(model.inff(t, z, s, 0)), values(z)) < 1e-12);
}

TEST_CASE("INFF filters adapt to the instance") {
  nfm::NfmModel model(small(), 6);
  Tape t(false);
  Var x = t.constant({2, 16, 2}, testing::randn(64, 8));
  const nfm::EmbeddingState s = model.lft(t, model.input_projection(t, x, {}), factors(1, 1));
  Var r;
  model.inff(t, s.z0, s, 0, &r);
  const std::size_t per = r.value().size() / 2;
  double diff = 0.0;
  for (std::size_t i = 0; i < per; ++i) diff = std::max(diff, std::abs(r.value()[i] - r.value()[per + i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("mixer block with zeroed sublayers is a layer norm of the skip") {
  nfm::NfmModel model(small(), 7);
  zero(model, "block0.mlp.w2");
  zero(model, "block0.mlp.b2");
  Tape t(false);
  Var x = t.constant({1, 10, 2}, testing::randn(20, 9));
  const nfm::EmbeddingState s = model.lft(t, model.input_projection(t, x, {}), factors(1, 1));
  Var z = t.constant({1, 10, 6}, testing::randn(60, 10));
  Var out = model.mixer_block(t, z, s, 0, {});
  Var ref = ad::layer_norm(z, t.constant({6}, 1.0), t.constant({6}, 0.0));
  CHECK(max_abs_diff(values(out), values(ref)) < 1e-12);
}

TEST_CASE("stacking blocks changes the output") {
  nfm::ModelConfig one = small(), two = small();
  two.blocks = 2;
  nfm::NfmModel a(one, 8), b(two, 8);
  Tape t(false);
  Var x = t.constant({1, 10, 2}, testing::randn(20, 11));
  CHECK(max_abs_diff(values(a.backbone(t, x, factors(1, 1), {})), values(b.backbone(t, x, factors(1, 1), {}))) > 1e-3);
}

TEST_CASE("pooled head is invariant to position order") {
  nfm::ModelConfig c = small();
  c.head = nfm::HeadKind::Pooled;
  c.out_dim = 3;
  nfm::NfmModel model(c, 9);
  Tape t(false);
  const auto z = testing::randn(10 * 6, 12);
  std::vector<double> rev(z.size());
  for (std::size_t n = 0; n < 10; ++n)
    for (std::size_t j = 0; j < 6; ++j) rev[(9 - n) * 6 + j] = z[n * 6 + j];
  Var a = model.head(t, t.constant({1, 10, 6}, z)), b = model.head(t, t.constant({1, 10, 6}, rev));
  CHECK(a.shape() == ad::Shape{1, 3});
  CHECK(max_abs_diff(values(a), values(b)) < 1e-12);
  const std::vector<double> constant(60, 0.25);
  Var pooled = ad::mean_axis(t.constant({1, 10, 6}, constant), 1);
  for (double v : values(pooled)) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("resolution equivalence for band-limited input") {
  // the sine branch of the input projection creates harmonics, so exact
  // equivalence needs it switched off
  nfm::NfmModel model(small(1, 6), 10);
  zero(model, "proj.w2");
  const std::size_t n = 32;
  const auto x = smooth_batch(2, n, 1, 7, 13);
  std::vector<double> half;
  for (std::size_t i = 0; i < x.size(); i += 2) half.push_back(x[i]);
  Tape t(false);
  Var full = model.forward(t, t.constant({2, n, 1}, x), factors(1, 1), {});
  Var low = model.forward(t, t.constant({2, n / 2, 1}, half), factors(1, 2), {});
  CHECK(low.shape() == full.shape());
  CHECK(max_abs_diff(values(low), values(full)) < 1e-6);
}

TEST_CASE("forward is deterministic for a seed") {
  nfm::NfmModel a(small(), 11), b(small(), 11);
  CHECK(a.params().flatten() == b.params().flatten());
  CHECK(a.frozen_constants() == b.frozen_constants());
  Tape t(false);
  Var x = t.constant({2, 9, 2}, testing::randn(36, 1));
  CHECK(values(a.forward(t, x, factors(1, 1), {})) == values(b.forward(t, x, factors(1, 1), {})));
}

TEST_CASE("backbone gradients on a d=4, N=16 toy") {
  nfm::ModelConfig toy = small(2, 4);
  toy.blocks = 2;
  const nfm::GradReport r = nfm::gradcheck_suite(toy, 3);
  CHECK(r.components.size() >= 10);
  for (const auto& [name, err] : r.components) CHECK_MESSAGE(err < 1e-4, name << ": " << err);
}

TEST_CASE("forward budget: N=720, horizon 96, batch 32") {
  nfm::NfmModel model(table_config("forecast"), 0);
  nfm::TaskSpec task;
  task.kind = nfm::TaskKind::Forecast;
  task.horizon = 96;
  Tape warm(false);
  model.forward(warm, warm.constant({1, 720, 1}, 0.0), task.factors(720), {});
  Tape t(false);
  Var x = t.constant({32, 720, 1}, testing::randn(32 * 720, 1));
  const auto start = std::chrono::steady_clock::now();
  Var y = model.forward(t, x, task.factors(720), {});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(y.shape() == ad::Shape{32, 816, 1});
  MESSAGE("forward of 32 x 720 -> 816 took " << secs << " s");
  CHECK(secs < 1.0);
}

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "nfm/autodiff.hpp"
#include "nfm/error.hpp"
#include "nfm/optim.hpp"

namespace ad = nfm::ad;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

ad::Parameter& make(ad::ParameterStore& store, const std::string& name, Shape shape, std::uint64_t seed,
                    double away_from_zero = 0.0) {
  ad::Parameter& p = store.add(name, std::move(shape));
  p.value = testing::randn(p.value.size(), seed);
  // keeps relu/abs inputs off their kinks so central differences stay valid
  for (double& v : p.value)
    if (std::abs(v) < away_from_zero) v = v < 0 ? v - away_from_zero : v + away_from_zero;
  return p;
}

// reduces any tensor to a scalar with fixed random weights so every output
// element contributes a distinct gradient
Var project(Var y, std::uint64_t seed = 99) {
  const std::size_t n = ad::numel(y.shape());
  return ad::sum(ad::mul(y, y.tape().constant(y.shape(), testing::randn(n, seed))));
}

double check(ad::ParameterStore& store, const std::function<Var(Tape&)>& f) {
  auto params = store.all();
  return ad::grad_check(f, params);
}

}  // namespace

TEST_CASE("op examples") {
  ad::ParameterStore store;
  ad::Parameter& x = store.add("x", {1});

  x.value = {-1.0};
  {
    Tape t;
    Var y = ad::relu(t.param(x));
    store.zero_grad();
    t.backward(y);
    CHECK(x.grad[0] == 0.0);
  }
  x.value = {0.0};
  {
    Tape t;
    store.zero_grad();
    t.backward(ad::sin(t.param(x)));
    CHECK(x.grad[0] == doctest::Approx(1.0));
  }
  {
    Tape t;
    Var one = t.constant({1, 2}, std::vector<double>{1.0, 0.0});
    Var w = t.constant({1, 2}, std::vector<double>{2.5, -4.0});
    Var p = ad::complex_mul(one, w);
    CHECK(p.value()[0] == 2.5);
    CHECK(p.value()[1] == -4.0);
  }
}

TEST_CASE("grad_check on a polynomial") {
  ad::ParameterStore store;
  ad::Parameter& t = store.add("theta", {1});
  t.value = {3.0};
  CHECK(check(store, [&](Tape& tape) { return ad::sum(ad::square(tape.param(t))); }) < 1e-8);
}

TEST_CASE("every op passes grad_check") {
  ad::ParameterStore s;
  auto& a = make(s, "a", {3, 4}, 1, 0.05);
  auto& b = make(s, "b", {3, 4}, 2, 0.05);
  auto& row = make(s, "row", {4}, 3);
  auto& m = make(s, "m", {4, 5}, 4);
  auto& c1 = make(s, "c1", {2, 3, 2}, 5, 0.05);
  auto& c2 = make(s, "c2", {2, 3, 2}, 6);
  auto& cw = make(s, "cw", {4, 3, 2}, 7);
  auto& cb = make(s, "cb", {4, 2}, 8);
  auto& w = make(s, "w", {2, 4}, 9);
  auto& bias = make(s, "bias", {2}, 10);
  auto& gain = make(s, "gain", {4}, 11);
  auto& seq = make(s, "seq", {2, 6, 3}, 12);

  auto only = [&](std::initializer_list<ad::Parameter*> ps, const std::function<Var(Tape&)>& f) {
    std::vector<ad::Parameter*> v(ps);
    return ad::grad_check(f, v);
  };
  const double tol = 1e-4;

  CHECK(only({&a, &b}, [&](Tape& t) { return project(ad::add(t.param(a), t.param(b))); }) < tol);
  CHECK(only({&a, &row}, [&](Tape& t) { return project(ad::add(t.param(a), t.param(row))); }) < tol);
  CHECK(only({&a, &b}, [&](Tape& t) { return project(ad::sub(t.param(a), t.param(b))); }) < tol);
  CHECK(only({&a, &row}, [&](Tape& t) { return project(ad::mul(t.param(a), t.param(row))); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return project(ad::scale(t.param(a), -1.7)); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return project(ad::sin(t.param(a))); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return project(ad::cos(t.param(a))); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return project(ad::relu(t.param(a))); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return project(ad::square(t.param(a))); }) < tol);
  CHECK(only({&c1, &c2}, [&](Tape& t) { return project(ad::complex_mul(t.param(c1), t.param(c2))); }) < tol);
  CHECK(only({&c1}, [&](Tape& t) { return project(ad::complex_abs(t.param(c1))); }) < tol);
  CHECK(only({&a, &m}, [&](Tape& t) { return project(ad::matmul(t.param(a), t.param(m))); }) < tol);
  CHECK(only({&a, &w, &bias}, [&](Tape& t) { return project(ad::linear(t.param(a), t.param(w), t.param(bias))); }) <
        tol);
  CHECK(only({&c1, &cw, &cb},
             [&](Tape& t) { return project(ad::complex_linear(t.param(c1), t.param(cw), t.param(cb))); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return ad::scale(ad::sum(ad::sin(t.param(a))), 1.0); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return ad::mean(ad::square(t.param(a))); }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::mean_axis(t.param(seq), 1)); }) < tol);
  CHECK(only({&a}, [&](Tape& t) { return ad::variance(t.param(a)); }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::instance_norm(t.param(seq), 1)); }) < tol);
  CHECK(only({&a, &gain, &row},
             [&](Tape& t) { return project(ad::layer_norm(t.param(a), t.param(gain), t.param(row))); }) < tol);
  const std::vector<int> labels{3, 0, 1};
  CHECK(only({&a}, [&](Tape& t) { return ad::softmax_cross_entropy(t.param(a), labels); }) < tol);
  CHECK(only({&a, &b}, [&](Tape& t) {
          const Var parts[] = {t.param(a), ad::sin(t.param(b))};
          return project(ad::concat(parts, 1));
        }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::slice(t.param(seq), 1, 2, 5)); }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::sin(ad::reshape(t.param(seq), {6, 6}))); }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::rfft(t.param(seq), 1)); }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::rfft(t.param(seq), 2)); }) < tol);
  CHECK(only({&seq}, [&](Tape& t) { return project(ad::irfft(ad::rfft(ad::sin(t.param(seq)), 1), 1, 6)); }) < tol);
  CHECK(only({&c1}, [&](Tape& t) { return project(ad::irfft(t.param(c1), 1, 4)); }) < tol);
  CHECK(only({&c1}, [&](Tape& t) { return project(ad::irfft(t.param(c1), 1, 5)); }) < tol);
  nfm::ExtensionFactors f;
  f.m_tau = nfm::Rational(3, 2);
  f.m_f = nfm::Rational(2);
  const nfm::ExtensionMap map = nfm::extension_map(6, f);
  CHECK(only({&seq}, [&](Tape& t) {
          return project(ad::irfft(ad::extend_spectrum(ad::rfft(t.param(seq), 1), 1, map), 1, map.n_out));
        }) < tol);
  CHECK(only({&a}, [&](Tape& t) {
          nfm::Rng rng(4);
          return project(ad::dropout(t.param(a), 0.3, rng, true));
        }) < tol);
}

TEST_CASE("grad_check catches a wrong backward rule") {
  ad::ParameterStore s;
  auto& a = make(s, "a", {5}, 1);
  // forward is 3x, backward claims 2x
  auto bad_triple = [](Var x) {
    std::vector<double> y(x.value().begin(), x.value().end());
    for (double& v : y) v *= 3.0;
    const std::size_t xi = x.id();
    return x.tape().push(x.shape(), std::move(y), {x}, [xi](Tape& t, std::size_t self) {
      const auto& g = t.grad(self);
      auto& gx = t.grad_buffer(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * g[i];
    });
  };
  std::vector<ad::Parameter*> ps{&a};
  CHECK(ad::grad_check([&](Tape& t) { return project(bad_triple(t.param(a))); }, ps) > 1e-2);
}

TEST_CASE("grad_check rejects a non-finite objective") {
  ad::ParameterStore s;
  auto& a = s.add("a", {1});
  a.value = {0.0};
  std::vector<ad::Parameter*> ps{&a};
  CHECK_THROWS_AS(ad::grad_check([&](Tape& t) { return ad::scale(t.param(a), INFINITY); }, ps), nfm::Error);
}

TEST_CASE("shared subexpressions accumulate") {
  ad::ParameterStore s;
  auto& a = make(s, "a", {4}, 3);
  std::vector<double> shared, duplicated;
  {
    Tape t;
    Var y = ad::sin(t.param(a));
    s.zero_grad();
    t.backward(ad::sum(ad::add(y, y)));
    shared = a.grad;
  }
  {
    Tape t;
    s.zero_grad();
    t.backward(ad::sum(ad::add(ad::sin(t.param(a)), ad::sin(t.param(a)))));
    duplicated = a.grad;
  }
  CHECK(testing::max_abs_diff(shared, duplicated) < 1e-15);
  for (std::size_t i = 0; i < 4; ++i) CHECK(shared[i] == doctest::Approx(2.0 * std::cos(a.value[i])));
}

TEST_CASE("shape errors name both shapes") {
  Tape t;
  Var x = t.constant({2, 3}, 0.0), y = t.constant({3, 2}, 0.0);
  CHECK_THROWS_WITH_AS(ad::add(x, y), doctest::Contains("[2, 3]"), nfm::Error);
  CHECK_THROWS_WITH_AS(ad::add(x, y), doctest::Contains("[3, 2]"), nfm::Error);
  CHECK_THROWS_AS(ad::matmul(x, x), nfm::Error);
  CHECK_THROWS_AS(ad::complex_mul(x, x), nfm::Error);
}

TEST_CASE("dropout") {
  Tape t;
  Var x = t.constant({1000}, 1.0);
  nfm::Rng r1(7), r2(7);
  Var a = ad::dropout(x, 0.25, r1, true), b = ad::dropout(x, 0.25, r2, true);
  CHECK(std::vector<double>(a.value().begin(), a.value().end()) ==
        std::vector<double>(b.value().begin(), b.value().end()));
  std::size_t zeros = 0;
  for (double v : a.value()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  CHECK(zeros > 200);
  CHECK(zeros < 300);
  nfm::Rng r3(7);
  Var eval = ad::dropout(x, 0.25, r3, false);
  CHECK(eval.id() == x.id());
}

TEST_CASE("Adam") {
  ad::ParameterStore s;
  auto& p = s.add("p", {1});
  p.value = {1.0};
  ad::Adam opt(s, {});

  p.grad = {0.0};
  opt.step();
  CHECK(p.value[0] == 1.0);

  ad::ParameterStore s2;
  auto& q = s2.add("q", {1});
  q.value = {0.0};
  ad::Adam opt2(s2, {});
  q.grad = {0.1};
  opt2.step();
  CHECK(std::abs(std::abs(q.value[0]) - 1e-3) < 1e-5);
  q.grad = {-0.1};
  opt2.step();
  CHECK(std::abs(q.value[0]) < 1e-3);

  q.grad = {NAN};
  const double before = q.value[0];
  CHECK_THROWS_WITH_AS(opt2.step(), doctest::Contains("diverged"), nfm::Error);
  CHECK(q.value[0] == before);
}

TEST_CASE("Adam trajectories are deterministic") {
  auto run = [] {
    ad::ParameterStore s;
    auto& w = make(s, "w", {3, 3}, 4);
    ad::Adam opt(s, {.lr = 0.05});
    for (int i = 0; i < 20; ++i) {
      Tape t;
      s.zero_grad();
      t.backward(project(ad::sin(ad::matmul(t.param(w), t.param(w)))));
      opt.step();
    }
    return w.value;
  };
  CHECK(run() == run());
}

TEST_CASE("cosine schedule") {
  CHECK(ad::cosine_lr(0, 100, 1e-3, 1e-5) == doctest::Approx(1e-3));
  CHECK(ad::cosine_lr(100, 100, 1e-3, 1e-5) == doctest::Approx(1e-5));
  CHECK(ad::cosine_lr(50, 100, 1e-3, 1e-5) == doctest::Approx((1e-3 + 1e-5) / 2));
  CHECK(ad::cosine_lr(3, 0, 1e-3, 0.0) == 1e-3);
}

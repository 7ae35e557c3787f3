#include "nfm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nfm/error.hpp"
#include "nfm/spectral.hpp"

namespace nfm::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Shape shape) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  Parameter& p = params_.emplace_back();
  p.name = name;
  p.value.assign(numel(shape), 0.0);
  p.grad.assign(p.value.size(), 0.0);
  p.shape = std::move(shape);
  return p;
}

Parameter& ParameterStore::get(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : params_) out.push_back(&p);
  return out;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::vector<double> ParameterStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  for (const Parameter& p : params_) flat.insert(flat.end(), p.value.begin(), p.value.end());
  return flat;
}

void ParameterStore::assign(std::span<const double> flat) {
  if (flat.size() != count()) {
    throw Error("parameter vector has " + std::to_string(flat.size()) + " entries, model expects " +
                std::to_string(count()));
  }
  auto it = flat.begin();
  for (Parameter& p : params_) {
    std::copy_n(it, p.value.size(), p.value.begin());
    it += static_cast<std::ptrdiff_t>(p.value.size());
  }
}

// ---------------------------------------------------------------------------
// Var / Tape

const Shape& Var::shape() const { return tape_->shape(id_); }
std::span<const double> Var::value() const { return tape_->value(id_); }
std::span<const double> Var::grad() const { return tape_->grad(id_); }

double Var::item() const {
  const auto& v = tape_->value(id_);
  if (v.size() != 1) throw Error("item() on tensor of shape " + to_string(shape()));
  return v[0];
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw Error("constant: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  }
  Node& n = nodes_.emplace_back();
  n.shape = std::move(shape);
  n.value = std::move(values);
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Shape shape, double fill) {
  const std::size_t count = numel(shape);
  return constant(std::move(shape), std::vector<double>(count, fill));
}

Var Tape::param(Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.shape = p.shape;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = record_;
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Shape shape, std::vector<double> value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(shape), std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Shape shape, std::vector<double> value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw Error("op mixes variables from different tapes");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  Node& n = nodes_.emplace_back();
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.needs_grad = record_ && needs;
  if (n.needs_grad) n.backward = std::move(backward);
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw Error("backward: root belongs to another tape");
  if (nodes_[root.id()].value.size() != 1) throw Error("backward: root must be a single element");
  if (!nodes_[root.id()].needs_grad) return;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      for (std::size_t j = 0; j < n.grad.size(); ++j) n.param->grad[j] += n.grad[j];
    }
  }
}

// ---------------------------------------------------------------------------
// helpers

namespace {

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw Error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit out{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

/// 1 when shapes match, otherwise the number of repeats of b inside a.
std::size_t broadcast_repeats(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return 1;
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return numel(a) / std::max<std::size_t>(numel(b), 1);
  throw Error(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

void require_complex(const Var& a, const char* op) {
  if (a.rank() == 0 || a.shape().back() != 2) {
    throw Error(std::string(op) + ": expected trailing (re, im) axis, got " + to_string(a.shape()));
  }
}

template <class F, class D>
Var unary(Var a, F forward, D derivative) {
  const auto& x = a.value();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = forward(x[i]);
  const std::size_t ai = a.id();
  return a.tape().push(a.shape(), std::move(y), {a}, [ai, derivative](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ai);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * derivative(x[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  const std::size_t reps = broadcast_repeats(a.shape(), b.shape(), "add");
  const auto& x = a.value();
  const auto& z = b.value();
  const std::size_t nb = z.size();
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) y[r * nb + j] = x[r * nb + j] + z[j];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(a.shape(), std::move(y), {a, b}, [ai, bi, reps, nb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j];
    }
  });
}

Var sub(Var a, Var b) {
  const std::size_t reps = broadcast_repeats(a.shape(), b.shape(), "sub");
  const auto& x = a.value();
  const auto& z = b.value();
  const std::size_t nb = z.size();
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) y[r * nb + j] = x[r * nb + j] - z[j];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(a.shape(), std::move(y), {a, b}, [ai, bi, reps, nb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) gb[j] -= g[r * nb + j];
    }
  });
}

Var mul(Var a, Var b) {
  const std::size_t reps = broadcast_repeats(a.shape(), b.shape(), "mul");
  const auto& x = a.value();
  const auto& z = b.value();
  const std::size_t nb = z.size();
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j) y[r * nb + j] = x[r * nb + j] * z[j];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push(a.shape(), std::move(y), {a, b}, [ai, bi, reps, nb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ai);
    const auto& z = t.value(bi);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) ga[r * nb + j] += g[r * nb + j] * z[j];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j] * x[r * nb + j];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var sin(Var a) {
  return unary(a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var complex_mul(Var a, Var b) {
  require_complex(a, "complex_mul");
  require_complex(b, "complex_mul");
  const std::size_t reps = broadcast_repeats(a.shape(), b.shape(), "complex_mul");
  const auto& x = a.value();
  const auto& z = b.value();
  const std::size_t nb = z.size() / 2;
  std::vector<double> y(x.size());
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < nb; ++j) {
      const std::size_t i = r * nb + j;
      const double ar = x[2 * i], ai = x[2 * i + 1], br = z[2 * j], bi = z[2 * j + 1];
      y[2 * i] = ar * br - ai * bi;
      y[2 * i + 1] = ar * bi + ai * br;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(a.shape(), std::move(y), {a, b}, [ia, ib, reps, nb](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& z = t.value(ib);
    // dL/da = g * conj(b), dL/db = g * conj(a) on (re, im) pairs
    if (t.needs_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < nb; ++j) {
          const std::size_t i = r * nb + j;
          const double gr = g[2 * i], gi = g[2 * i + 1], br = z[2 * j], bi = z[2 * j + 1];
          ga[2 * i] += gr * br + gi * bi;
          ga[2 * i + 1] += gi * br - gr * bi;
        }
      }
    }
    if (t.needs_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < nb; ++j) {
          const std::size_t i = r * nb + j;
          const double gr = g[2 * i], gi = g[2 * i + 1], ar = x[2 * i], ai = x[2 * i + 1];
          gb[2 * j] += gr * ar + gi * ai;
          gb[2 * j + 1] += gi * ar - gr * ai;
        }
      }
    }
  });
}

Var complex_abs(Var a) {
  require_complex(a, "complex_abs");
  const auto& x = a.value();
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<double> y(x.size() / 2);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::hypot(x[2 * i], x[2 * i + 1]);
  const std::size_t ai = a.id();
  return a.tape().push(std::move(shape), std::move(y), {a}, [ai](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    const auto& x = t.value(ai);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (y[i] == 0.0) continue;  // subgradient 0 at the origin
      ga[2 * i] += g[i] * x[2 * i] / y[i];
      ga[2 * i + 1] += g[i] * x[2 * i + 1] / y[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw Error("matmul: shape mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto& x = a.value();
  const auto& w = b.value();
  std::vector<double> y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) y[i * n + j] += xv * w[p * n + j];
    }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().push({m, n}, std::move(y), {a, b}, [ai, bi, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ai);
    const auto& w = t.value(bi);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * w[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * g[i * n + j];
        }
    }
  });
}

Var linear(Var x, Var weight, Var bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(1)) {
    throw Error("linear: shape mismatch " + to_string(x.shape()) + " x " + to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out = weight.dim(0);
  if (bias.valid() && bias.shape() != Shape{out}) {
    throw Error("linear: bias shape " + to_string(bias.shape()) + " does not match " + std::to_string(out));
  }
  const std::size_t rows = numel(x.shape()) / in;
  const auto& xv = x.value();
  const auto& w = weight.value();
  // transposed weight keeps the inner loop contiguous over outputs
  std::vector<double> wt(in * out);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) wt[i * out + o] = w[o * in + i];
  std::vector<double> y(rows * out, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out;
    if (bias.valid()) std::copy_n(bias.value().begin(), out, yr);
    const double* xr = xv.data() + r * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double v = xr[i];
      const double* wr = wt.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += v * wr[o];
    }
  }
  Shape shape = x.shape();
  shape.back() = out;
  const std::size_t xi = x.id(), wi = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t bi = has_bias ? bias.id() : 0;
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.tape().push(std::move(shape), std::move(y), inputs,
                       [xi, wi, bi, has_bias, rows, in, out](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         if (t.needs_grad(xi)) {
                           const auto& w = t.value(wi);
                           auto& gx = t.grad_buffer(xi);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double* gxr = gx.data() + r * in;
                             for (std::size_t o = 0; o < out; ++o) {
                               const double go = g[r * out + o];
                               const double* wr = w.data() + o * in;
                               for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
                             }
                           }
                         }
                         if (t.needs_grad(wi)) {
                           const auto& xv = t.value(xi);
                           auto& gw = t.grad_buffer(wi);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* xr = xv.data() + r * in;
                             for (std::size_t o = 0; o < out; ++o) {
                               const double go = g[r * out + o];
                               double* gwr = gw.data() + o * in;
                               for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
                             }
                           }
                         }
                         if (has_bias && t.needs_grad(bi)) {
                           auto& gb = t.grad_buffer(bi);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
                         }
                       });
}

Var complex_linear(Var x, Var weight, Var bias) {
  require_complex(x, "complex_linear");
  if (weight.rank() != 3 || weight.dim(2) != 2 || x.rank() < 2 || x.dim(x.rank() - 2) != weight.dim(1)) {
    throw Error("complex_linear: shape mismatch " + to_string(x.shape()) + " x " + to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out = weight.dim(0);
  if (bias.valid() && bias.shape() != Shape{out, 2}) {
    throw Error("complex_linear: bias shape " + to_string(bias.shape()) + " does not match [" + std::to_string(out) + ", 2]");
  }
  const std::size_t rows = numel(x.shape()) / (2 * in);
  const auto& xv = x.value();
  const auto& w = weight.value();
  std::vector<double> wr(in * out), wi(in * out);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) {
      wr[i * out + o] = w[(o * in + i) * 2];
      wi[i * out + o] = w[(o * in + i) * 2 + 1];
    }
  std::vector<double> y(rows * out * 2);
  std::vector<double> yr(out), yi(out);
  for (std::size_t r = 0; r < rows; ++r) {
    if (bias.valid()) {
      const auto& b = bias.value();
      for (std::size_t o = 0; o < out; ++o) {
        yr[o] = b[2 * o];
        yi[o] = b[2 * o + 1];
      }
    } else {
      std::fill(yr.begin(), yr.end(), 0.0);
      std::fill(yi.begin(), yi.end(), 0.0);
    }
    const double* xr = xv.data() + r * in * 2;
    for (std::size_t i = 0; i < in; ++i) {
      const double re = xr[2 * i], im = xr[2 * i + 1];
      const double* a = wr.data() + i * out;
      const double* c = wi.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) {
        yr[o] += a[o] * re - c[o] * im;
        yi[o] += a[o] * im + c[o] * re;
      }
    }
    double* dst = y.data() + r * out * 2;
    for (std::size_t o = 0; o < out; ++o) {
      dst[2 * o] = yr[o];
      dst[2 * o + 1] = yi[o];
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = out;
  const std::size_t xid = x.id(), wid = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t bid = has_bias ? bias.id() : 0;
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return x.tape().push(std::move(shape), std::move(y), inputs,
                       [xid, wid, bid, has_bias, rows, in, out](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         // dx = W^H g, dW = g x^H, db = g on (re, im) pairs
                         if (t.needs_grad(xid)) {
                           const auto& w = t.value(wid);
                           auto& gx = t.grad_buffer(xid);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* gr = g.data() + r * out * 2;
                             double* dst = gx.data() + r * in * 2;
                             for (std::size_t o = 0; o < out; ++o) {
                               const double g_re = gr[2 * o], g_im = gr[2 * o + 1];
                               const double* wrow = w.data() + o * in * 2;
                               for (std::size_t i = 0; i < in; ++i) {
                                 const double a = wrow[2 * i], c = wrow[2 * i + 1];
                                 dst[2 * i] += g_re * a + g_im * c;
                                 dst[2 * i + 1] += g_im * a - g_re * c;
                               }
                             }
                           }
                         }
                         if (t.needs_grad(wid)) {
                           const auto& xv = t.value(xid);
                           auto& gw = t.grad_buffer(wid);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* gr = g.data() + r * out * 2;
                             const double* xr = xv.data() + r * in * 2;
                             for (std::size_t o = 0; o < out; ++o) {
                               const double g_re = gr[2 * o], g_im = gr[2 * o + 1];
                               double* dst = gw.data() + o * in * 2;
                               for (std::size_t i = 0; i < in; ++i) {
                                 const double re = xr[2 * i], im = xr[2 * i + 1];
                                 dst[2 * i] += g_re * re + g_im * im;
                                 dst[2 * i + 1] += g_im * re - g_re * im;
                               }
                             }
                           }
                         }
                         if (has_bias && t.needs_grad(bid)) {
                           auto& gb = t.grad_buffer(bid);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t o = 0; o < 2 * out; ++o) gb[o] += g[r * out * 2 + o];
                         }
                       });
}

// ---------------------------------------------------------------------------
// Reductions and normalization

Var sum(Var a) {
  const auto& x = a.value();
  double s = 0.0;
  for (double v : x) s += v;
  const std::size_t ai = a.id();
  return a.tape().push({}, {s}, {a}, [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    auto& ga = t.grad_buffer(ai);
    for (double& v : ga) v += g;
  });
}

Var mean(Var a) {
  const auto& x = a.value();
  if (x.empty()) throw Error("mean of empty tensor");
  double s = 0.0;
  for (double v : x) s += v;
  const double n = static_cast<double>(x.size());
  const std::size_t ai = a.id();
  return a.tape().push({}, {s / n}, {a}, [ai, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / n;
    auto& ga = t.grad_buffer(ai);
    for (double& v : ga) v += g;
  });
}

Var mean_axis(Var a, std::size_t axis) {
  const auto [outer, len, inner] = split_axis(a.shape(), axis, "mean_axis");
  const auto& x = a.value();
  std::vector<double> y(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += x[(o * len + l) * inner + i];
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : y) v *= inv;
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const std::size_t ai = a.id();
  return a.tape().push(std::move(shape), std::move(y), {a},
                       [ai, outer = outer, len = len, inner = inner, inv](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         auto& ga = t.grad_buffer(ai);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t l = 0; l < len; ++l)
                             for (std::size_t i = 0; i < inner; ++i) ga[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                       });
}

Var variance(Var a) {
  const auto& x = a.value();
  if (x.empty()) throw Error("variance of empty tensor");
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  const std::size_t ai = a.id();
  return a.tape().push({}, {var}, {a}, [ai, n, mu](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const auto& x = t.value(ai);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * 2.0 * (x[i] - mu) / n;
  });
}

Var instance_norm(Var a, std::size_t axis, double eps) {
  const auto [outer, len, inner] = split_axis(a.shape(), axis, "instance_norm");
  const auto& x = a.value();
  std::vector<double> y(x.size());
  std::vector<double> inv_std(outer * inner);
  const double n = static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      double mu = 0.0;
      for (std::size_t l = 0; l < len; ++l) mu += x[(o * len + l) * inner + i];
      mu /= n;
      double var = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double d = x[(o * len + l) * inner + i] - mu;
        var += d * d;
      }
      var /= n;
      const double s = 1.0 / std::sqrt(var + eps);
      inv_std[o * inner + i] = s;
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t idx = (o * len + l) * inner + i;
        y[idx] = (x[idx] - mu) * s;
      }
    }
  }
  const std::size_t ai = a.id();
  return a.tape().push(a.shape(), std::move(y), {a},
                       [ai, outer = outer, len = len, inner = inner, n, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         const auto& y = t.value(self);
                         auto& ga = t.grad_buffer(ai);
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             double mg = 0.0, mgy = 0.0;
                             for (std::size_t l = 0; l < len; ++l) {
                               const std::size_t idx = (o * len + l) * inner + i;
                               mg += g[idx];
                               mgy += g[idx] * y[idx];
                             }
                             mg /= n;
                             mgy /= n;
                             const double s = inv_std[o * inner + i];
                             for (std::size_t l = 0; l < len; ++l) {
                               const std::size_t idx = (o * len + l) * inner + i;
                               ga[idx] += s * (g[idx] - mg - y[idx] * mgy);
                             }
                           }
                         }
                       });
}

Var layer_norm(Var a, Var gain, Var shift, double eps) {
  if (a.rank() == 0) throw Error("layer_norm: scalar input");
  const std::size_t d = a.shape().back();
  if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
    throw Error("layer_norm: affine shape mismatch " + to_string(gain.shape()) + " for feature size " + std::to_string(d));
  }
  const std::size_t rows = numel(a.shape()) / d;
  const auto& x = a.value();
  const auto& gv = gain.value();
  const auto& bv = shift.value();
  std::vector<double> normed(x.size()), y(x.size()), inv_std(rows);
  const double n = static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    const double s = 1.0 / std::sqrt(var + eps);
    inv_std[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      normed[r * d + j] = (xr[j] - mu) * s;
      y[r * d + j] = normed[r * d + j] * gv[j] + bv[j];
    }
  }
  const std::size_t ai = a.id(), gi = gain.id(), bi = shift.id();
  return a.tape().push(a.shape(), std::move(y), {a, gain, shift},
                       [ai, gi, bi, rows, d, n, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         if (t.needs_grad(gi)) {
                           auto& gg = t.grad_buffer(gi);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * normed[r * d + j];
                         }
                         if (t.needs_grad(bi)) {
                           auto& gb = t.grad_buffer(bi);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                         }
                         if (t.needs_grad(ai)) {
                           const auto& gv = t.value(gi);
                           auto& ga = t.grad_buffer(ai);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double mg = 0.0, mgy = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               const double gx = g[r * d + j] * gv[j];
                               mg += gx;
                               mgy += gx * normed[r * d + j];
                             }
                             mg /= n;
                             mgy /= n;
                             for (std::size_t j = 0; j < d; ++j) {
                               const double gx = g[r * d + j] * gv[j];
                               ga[r * d + j] += inv_std[r] * (gx - mg - normed[r * d + j] * mgy);
                             }
                           }
                         }
                       });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error("softmax_cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(labels.size()) +
                " labels");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  const auto& z = logits.value();
  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) throw Error("softmax_cross_entropy: label out of range");
    const double* zr = z.data() + r * c;
    const double mx = *std::max_element(zr, zr + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(zr[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(zr[j] - lse);
    loss += lse - zr[labels[r]];
  }
  loss /= static_cast<double>(b);
  std::vector<int> target(labels.begin(), labels.end());
  const std::size_t li = logits.id();
  return logits.tape().push({}, {loss}, {logits},
                            [li, b, c, probs = std::move(probs), target = std::move(target)](Tape& t, std::size_t self) {
                              const double g = t.grad(self)[0] / static_cast<double>(b);
                              auto& gl = t.grad_buffer(li);
                              for (std::size_t r = 0; r < b; ++r)
                                for (std::size_t j = 0; j < c; ++j) {
                                  const double onehot = static_cast<int>(j) == target[r] ? 1.0 : 0.0;
                                  gl[r * c + j] += g * (probs[r * c + j] - onehot);
                                }
                            });
}

// ---------------------------------------------------------------------------
// Structure

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  const Shape& ref = parts[0].shape();
  const auto [outer, len0, inner] = split_axis(ref, axis, "concat");
  (void)len0;
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw Error("concat: rank mismatch " + to_string(ref) + " vs " + to_string(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != ref[i]) throw Error("concat: shape mismatch " + to_string(ref) + " vs " + to_string(s));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  std::vector<double> y(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& x = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.data() + o * lens[p] * inner, lens[p] * inner, y.data() + (o * total + offset) * inner);
    offset += lens[p];
  }
  Shape shape = ref;
  shape[axis] = total;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().push(std::move(shape), std::move(y), parts,
                              [ids, lens, outer = outer, inner = inner, total](Tape& t, std::size_t self) {
                                const auto& g = t.grad(self);
                                std::size_t offset = 0;
                                for (std::size_t p = 0; p < ids.size(); ++p) {
                                  if (t.needs_grad(ids[p])) {
                                    auto& gp = t.grad_buffer(ids[p]);
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t j = 0; j < lens[p] * inner; ++j)
                                        gp[o * lens[p] * inner + j] += g[(o * total + offset) * inner + j];
                                  }
                                  offset += lens[p];
                                }
                              });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto [outer, len, inner] = split_axis(a.shape(), axis, "slice");
  if (begin > end || end > len) {
    throw Error("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds for " +
                to_string(a.shape()));
  }
  const std::size_t width = end - begin;
  const auto& x = a.value();
  std::vector<double> y(outer * width * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + (o * len + begin) * inner, width * inner, y.data() + o * width * inner);
  Shape shape = a.shape();
  shape[axis] = width;
  const std::size_t ai = a.id();
  return a.tape().push(std::move(shape), std::move(y), {a},
                       [ai, outer = outer, len = len, inner = inner, begin, width](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         auto& ga = t.grad_buffer(ai);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < width * inner; ++j) ga[(o * len + begin) * inner + j] += g[o * width * inner + j];
                       });
}

Var reshape(Var a, Shape shape) {
  if (numel(shape) != numel(a.shape())) {
    throw Error("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  std::vector<double> y(a.value().begin(), a.value().end());
  const std::size_t ai = a.id();
  return a.tape().push(std::move(shape), std::move(y), {a}, [ai](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var dropout(Var a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw Error("dropout: rate must be in [0, 1)");
  if (!training || p == 0.0) return a;
  const double keep = 1.0 / (1.0 - p);
  const auto& x = a.value();
  std::vector<double> mask(x.size()), y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep;
    y[i] = x[i] * mask[i];
  }
  const std::size_t ai = a.id();
  return a.tape().push(a.shape(), std::move(y), {a}, [ai, mask = std::move(mask)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Spectral

Var rfft(Var a, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(a.shape(), axis, "rfft");
  const std::size_t k = half_bins(n);
  const auto& x = a.value();
  std::vector<double> y(outer * k * inner * 2);
  std::vector<double> column(n);
  std::vector<Complex> bins(k);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t t = 0; t < n; ++t) column[t] = x[(o * n + t) * inner + i];
      spectral::rfft(column, bins);
      for (std::size_t b = 0; b < k; ++b) {
        const std::size_t idx = ((o * k + b) * inner + i) * 2;
        y[idx] = bins[b].real();
        y[idx + 1] = bins[b].imag();
      }
    }
  Shape shape = a.shape();
  shape[axis] = k;
  shape.push_back(2);
  const std::size_t ai = a.id();
  return a.tape().push(std::move(shape), std::move(y), {a},
                       [ai, outer = outer, n = n, inner = inner, k](Tape& t, std::size_t self) {
                         // dL/dx[n] = Re sum_k G[k] e^{+2 pi i k n / N}, evaluated with an inverse real FFT
                         const auto& g = t.grad(self);
                         auto& ga = t.grad_buffer(ai);
                         std::vector<Complex> bins(k);
                         std::vector<double> column(n);
                         const double full = static_cast<double>(n);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < inner; ++i) {
                             for (std::size_t b = 0; b < k; ++b) {
                               const std::size_t idx = ((o * k + b) * inner + i) * 2;
                               const bool edge = b == 0 || (n % 2 == 0 && b == n / 2);
                               const double w = edge ? 1.0 : 0.5;
                               bins[b] = {w * g[idx], w * g[idx + 1]};
                             }
                             spectral::irfft(bins, column);
                             for (std::size_t s = 0; s < n; ++s) ga[(o * n + s) * inner + i] += full * column[s];
                           }
                       });
}

Var irfft(Var a, std::size_t axis, std::size_t n) {
  require_complex(a, "irfft");
  Shape base(a.shape().begin(), a.shape().end() - 1);
  const auto [outer, k, inner] = split_axis(base, axis, "irfft");
  if (n == 0 || k != half_bins(n)) {
    throw Error("irfft: " + std::to_string(k) + " bins cannot produce length " + std::to_string(n));
  }
  const auto& x = a.value();
  std::vector<double> y(outer * n * inner);
  std::vector<Complex> bins(k);
  std::vector<double> column(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      for (std::size_t b = 0; b < k; ++b) {
        const std::size_t idx = ((o * k + b) * inner + i) * 2;
        bins[b] = {x[idx], x[idx + 1]};
      }
      spectral::irfft(bins, column);
      for (std::size_t s = 0; s < n; ++s) y[(o * n + s) * inner + i] = column[s];
    }
  Shape shape = base;
  shape[axis] = n;
  const std::size_t ai = a.id();
  return a.tape().push(std::move(shape), std::move(y), {a},
                       [ai, outer = outer, n, inner = inner, k = k](Tape& t, std::size_t self) {
                         // dL/dX[k] = (c_k / N) rfft(g)[k], c_k = 1 on DC/Nyquist and 2 elsewhere
                         const auto& g = t.grad(self);
                         auto& ga = t.grad_buffer(ai);
                         std::vector<Complex> bins(k);
                         std::vector<double> column(n);
                         const double inv_n = 1.0 / static_cast<double>(n);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < inner; ++i) {
                             for (std::size_t s = 0; s < n; ++s) column[s] = g[(o * n + s) * inner + i];
                             spectral::rfft(column, bins);
                             for (std::size_t b = 0; b < k; ++b) {
                               const bool edge = b == 0 || (n % 2 == 0 && b == n / 2);
                               const double c = (edge ? 1.0 : 2.0) * inv_n;
                               const std::size_t idx = ((o * k + b) * inner + i) * 2;
                               ga[idx] += c * bins[b].real();
                               if (!edge) ga[idx + 1] += c * bins[b].imag();
                             }
                           }
                       });
}

Var extend_spectrum(Var a, std::size_t axis, const ExtensionMap& map) {
  require_complex(a, "extend_spectrum");
  Shape base(a.shape().begin(), a.shape().end() - 1);
  const auto [outer, k_in, inner] = split_axis(base, axis, "extend_spectrum");
  if (k_in != map.target.size()) {
    throw Error("extend_spectrum: " + std::to_string(k_in) + " bins, map expects " + std::to_string(map.target.size()));
  }
  const std::size_t k_out = half_bins(map.n_out);
  // last writer wins for colliding targets
  std::vector<std::ptrdiff_t> source(k_out, -1);
  for (std::size_t k = 0; k < k_in; ++k) source[map.target[k]] = static_cast<std::ptrdiff_t>(k);
  std::vector<bool> real_only(k_out, false);
  real_only[0] = true;
  if (map.n_out % 2 == 0) real_only[map.n_out / 2] = true;

  const auto& x = a.value();
  std::vector<double> y(outer * k_out * inner * 2, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t b = 0; b < k_out; ++b) {
      if (source[b] < 0) continue;
      const auto src = static_cast<std::size_t>(source[b]);
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t from = ((o * k_in + src) * inner + i) * 2;
        const std::size_t to = ((o * k_out + b) * inner + i) * 2;
        y[to] = map.scale * x[from];
        y[to + 1] = real_only[b] ? 0.0 : map.scale * x[from + 1];
      }
    }
  Shape shape = a.shape();
  shape[axis] = k_out;
  const std::size_t ai = a.id();
  const double s = map.scale;
  return a.tape().push(std::move(shape), std::move(y), {a},
                       [ai, outer = outer, k_in = k_in, inner = inner, k_out, s, source = std::move(source),
                        real_only = std::move(real_only)](Tape& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         auto& ga = t.grad_buffer(ai);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t b = 0; b < k_out; ++b) {
                             if (source[b] < 0) continue;
                             const auto src = static_cast<std::size_t>(source[b]);
                             for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t from = ((o * k_in + src) * inner + i) * 2;
                               const std::size_t to = ((o * k_out + b) * inner + i) * 2;
                               ga[from] += s * g[to];
                               if (!real_only[b]) ga[from + 1] += s * g[to + 1];
                             }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Validation

double grad_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double h) {
  for (Parameter* p : params) p->grad.assign(p->value.size(), 0.0);
  {
    Tape tape;
    Var y = f(tape);
    if (!std::isfinite(y.item())) throw Error("grad_check: non-finite objective");
    tape.backward(y);
  }
  std::vector<std::vector<double>> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto evaluate = [&]() {
    Tape tape(false);
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw Error("grad_check: non-finite objective");
    return v;
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      value[i] = original + h;
      const double plus = evaluate();
      value[i] = original - h;
      const double minus = evaluate();
      value[i] = original;
      const double fd = (plus - minus) / (2.0 * h);
      const double err = std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace nfm::ad

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nfm/freq_manip.hpp"
#include "nfm/rng.hpp"

namespace nfm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// A named trainable array with an accumulated gradient of identical shape.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
};

/// Owns every trainable array of a model. Addresses are stable for the
/// lifetime of the store, so graph leaves can hold plain pointers.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  /// Number of trainable scalars.
  std::size_t count() const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

 private:
  std::deque<Parameter> params_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  std::span<const double> value() const;
  /// Gradient after Tape::backward; empty if no gradient reached this node.
  std::span<const double> grad() const;
  /// Value of a single-element tensor.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in creation order; creation order is a topological
/// order of the graph, so backward is a single reverse sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Shape shape, std::vector<double> values);
  Var constant(Shape shape, double fill);
  Var param(Parameter& p);

  /// Appends an op result. The backward rule runs only if some input
  /// requires a gradient and the tape is recording.
  Var push(Shape shape, std::vector<double> value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Shape shape, std::vector<double> value, std::span<const Var> inputs, Backward backward);

  /// Reverse sweep from a single-element root, accumulating into the
  /// gradients of every reachable Parameter.
  void backward(Var root);

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  const std::vector<double>& value(std::size_t id) const { return nodes_[id].value; }
  const std::vector<double>& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of a node, zero-initialized on first access.
  std::vector<double>& grad_buffer(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// ---------------------------------------------------------------------------
// Elementwise. For binary ops `b` may either match `a` or equal a trailing
// suffix of a's shape, in which case it is broadcast over the leading axes.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sin(Var a);
Var cos(Var a);
Var relu(Var a);
Var square(Var a);

/// Complex product on trailing (re, im) pairs: (a,b)(c,d) = (ac-bd, ad+bc).
Var complex_mul(Var a, Var b);
/// Modulus of trailing (re, im) pairs; drops the last axis.
Var complex_abs(Var a);

// ---------------------------------------------------------------------------
// Linear algebra.

/// [m, k] x [k, n] -> [m, n]
Var matmul(Var a, Var b);
/// x [..., in], weight [out, in], optional bias [out] -> [..., out]
Var linear(Var x, Var weight, Var bias = {});
/// x [..., in, 2], weight [out, in, 2], bias [out, 2] -> [..., out, 2]
Var complex_linear(Var x, Var weight, Var bias = {});

// ---------------------------------------------------------------------------
// Reductions and normalization.

Var sum(Var a);
Var mean(Var a);
/// Mean over one axis; the axis is removed.
Var mean_axis(Var a, std::size_t axis);
/// Population variance of all elements.
Var variance(Var a);
/// Zero mean, unit variance along `axis`, no affine parameters.
Var instance_norm(Var a, std::size_t axis, double eps = 1e-5);
/// Normalization over the last axis with learnable gain and shift.
Var layer_norm(Var a, Var gain, Var shift, double eps = 1e-5);
/// logits [batch, classes]; mean negative log-likelihood.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Structure.

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
/// Inverted dropout; identity when !training or p == 0.
Var dropout(Var a, double p, Rng& rng, bool training);

// ---------------------------------------------------------------------------
// Spectral ops along `axis`; complex results get a trailing (re, im) axis.

/// [..., n, ...] -> [..., n/2+1, ..., 2]
Var rfft(Var a, std::size_t axis);
/// [..., k, ..., 2] -> [..., n, ...]; imaginary DC/Nyquist parts are ignored.
Var irfft(Var a, std::size_t axis, std::size_t n);
/// Bin rearrangement of a half spectrum onto the extended grid.
Var extend_spectrum(Var a, std::size_t axis, const ExtensionMap& map);

// ---------------------------------------------------------------------------
// Validation.

/// Central-difference check of every scalar in `params` against backprop.
/// Returns max |g_ad - g_fd| / max(1, |g_fd|). `f` must be deterministic.
double grad_check(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params, double h = 1e-6);

}  // namespace nfm::ad

#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to the Vars it owns. Leaves are
// created with Tape::variable (gradients wanted) or Tape::constant. Calling
// Tape::backward on a scalar Var walks the tape once in reverse order and
// returns the gradient of every node that depends on a variable.

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvt/tensor.hpp"

namespace dvt {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Local backward rule. `input_grads[i]` is null when input i needs no gradient;
// otherwise it points at a zero-initialised accumulator the rule must add into.
using BackwardFn = std::function<void(const Tensor& grad_out, const Tensor& out,
                                      std::span<const Tensor* const> inputs,
                                      std::span<Tensor* const> input_grads)>;

class Gradients;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var variable(Tensor value);
  Var constant(Tensor value);

  // Records the result of an operation. Throws NumericError when `value` is
  // not finite, naming `op`.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const;
  std::size_t size() const { return nodes_.size(); }

  // Gradients of scalar `loss` with respect to every node it depends on.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  // A deque keeps value() references valid while later nodes are recorded.
  std::deque<Node> nodes_;
};

class Gradients {
 public:
  // Gradient of the loss with respect to `v`. Zero-filled when the loss does
  // not depend on `v`. Throws if `v` belongs to another tape.
  Tensor of(Var v) const;
  bool has(Var v) const;

 private:
  friend class Tape;
  Gradients(const Tape* tape, std::vector<std::optional<Tensor>> grads)
      : tape_(tape), grads_(std::move(grads)) {}
  const Tape* tape_;
  std::vector<std::optional<Tensor>> grads_;
};

// ---- forward operations -------------------------------------------------
//
// Binary elementwise ops accept equal shapes, a right operand whose shape
// equals the left shape without its leading (batch) dimension, or a scalar
// right operand.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
Var neg(Var a);

// (M, K) x (K, N) -> (M, N)
Var matmul(Var a, Var b);

Var exp(Var a);
Var log(Var a);  // input must be strictly positive
Var square(Var a);
Var relu(Var a);
Var softplus(Var a);
Var sigmoid(Var a);

Var sum(Var a);       // -> scalar
Var mean(Var a);      // -> scalar
Var sum_last(Var a);  // reduces the trailing dimension

Var softmax(Var a);      // over the trailing dimension
Var log_softmax(Var a);  // over the trailing dimension

// Concatenates along the trailing dimension. Leading dimensions must agree.
Var concat(std::span<const Var> parts);
// Columns [begin, end) of the trailing dimension.
Var slice_last(Var a, std::size_t begin, std::size_t end);
// Elements [offset, offset + size(shape)) of a flat vector, reshaped.
Var segment(Var flat, std::size_t offset, Shape shape);

// Appends a trailing axis of length n, repeating each element along it.
Var broadcast_last(Var a, std::size_t n);

// Squared Euclidean distances between rows of `a` (B, J) and rows of the
// constant `centers` (K, J). Result (B, K).
Var sq_dist_to_rows(Var a, const Tensor& centers);

// Forward value: one_hot(argmax(anchor)) + (relaxed - anchor). Backward: the
// identity. With `anchor` equal to the relaxed value this is the
// straight-through estimator; a frozen anchor lets finite differences see the
// same surrogate the backward pass differentiates. Ties go to the lowest index.
Var straight_through(Var relaxed, const Tensor& anchor);

// ---- gradient verification ---------------------------------------------

// Scalar function built on a tape from a single parameter Var.
using TapeFunction = std::function<Var(Tape&, Var)>;

// Maximum over coordinates of |analytic - central| / max(1, |central|),
// where central = (f(x + h e_i) - f(x - h e_i)) / 2h.
double finite_diff_check(const TapeFunction& f, const Tensor& x0, double h);

// Same check for an already computed analytic gradient and a plain function.
double finite_diff_check(const std::function<double(const Tensor&)>& f,
                         const Tensor& analytic, const Tensor& x0, double h);

}  // namespace dvt

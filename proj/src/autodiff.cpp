#include "dvt/autodiff.hpp"

#include <cmath>

#include "dvt/error.hpp"

namespace dvt {

const Tensor& Var::value() const {
  if (tape == nullptr) throw Error("var: not attached to a tape");
  return tape->value(id);
}

bool Var::requires_grad() const { return tape != nullptr && tape->requires_grad(id); }

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("variable: non-finite leaf value");
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite leaf value");
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite output for shape " +
                       shape_string(value.shape()));
  }
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this) throw Error(std::string(op) + ": input recorded on a different tape");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  if (id >= nodes_.size()) throw Error("tape: node " + std::to_string(id) + " not on tape");
  return nodes_[id].value;
}

bool Tape::requires_grad(std::size_t id) const {
  if (id >= nodes_.size()) throw Error("tape: node " + std::to_string(id) + " not on tape");
  return nodes_[id].requires_grad;
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw Error("backward: loss was recorded on a different tape");
  const Tensor& lv = value(loss.id);
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[loss.id] = Tensor(lv.shape(), 1.0);

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads[i] || !node.requires_grad || !node.backward) continue;
    inputs.clear();
    input_grads.clear();
    for (std::size_t in : node.inputs) {
      inputs.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (!grads[in]) grads[in] = Tensor(nodes_[in].value.shape());
        input_grads.push_back(&*grads[in]);
      } else {
        input_grads.push_back(nullptr);
      }
    }
    node.backward(*grads[i], node.value, inputs, input_grads);
  }
  return Gradients(this, std::move(grads));
}

Tensor Gradients::of(Var v) const {
  if (v.tape != tape_ || v.id >= grads_.size()) {
    throw Error("gradients: node " + std::to_string(v.id) + " not on this tape");
  }
  if (grads_[v.id]) return *grads_[v.id];
  return Tensor(tape_->value(v.id).shape());
}

bool Gradients::has(Var v) const {
  return v.tape == tape_ && v.id < grads_.size() && grads_[v.id].has_value();
}

// ---- finite differences --------------------------------------------------

double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& analytic,
                         const Tensor& x0, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
  if (analytic.shape() != x0.shape()) {
    throw ShapeError("finite_diff_check: gradient shape " + shape_string(analytic.shape()) +
                     " vs parameter shape " + shape_string(x0.shape()));
  }
  double worst = 0.0;
  Tensor x = x0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite value at coordinate " +
                         std::to_string(i));
    }
    const double central = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_diff_check(const TapeFunction& f, const Tensor& x0, double h) {
  Tape tape;
  Var x = tape.variable(x0);
  Var y = f(tape, x);
  const Tensor analytic = tape.backward(y).of(x);
  auto value = [&f](const Tensor& at) {
    Tape t;
    return f(t, t.variable(at)).value().item();
  };
  return finite_diff_check(value, analytic, x0, h);
}

}  // namespace dvt

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtfa/ops.hpp"
#include "mtfa/tensor.hpp"

namespace mtfa {

// Trainable tensor with its gradient accumulator and Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), adam_m(value.shape()), adam_v(value.shape()) {}

  void zero_grad() { std::fill(grad.values().begin(), grad.values().end(), real(0)); }
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  std::int32_t id = -1;
};

// Per-forward-pass record of executed operations; backward() replays it once
// in reverse execution order. One tape per forward pass, single-threaded.
class Tape {
 public:
  Var leaf(Tensor v);                // constant, no gradient tracking
  Var param(Parameter& p);           // gradient accumulates into p.grad

  const Tensor& val(Var v) const { return slots_[static_cast<std::size_t>(v.id)].value; }
  Tensor& grad(Var v);
  bool needs_grad(Var v) const { return slots_[static_cast<std::size_t>(v.id)].needs_grad; }

  Var conv2d(Var x, Var weight, Var bias);
  Var maxpool2d(Var x);
  Var upsample_nearest2(Var x);
  // train=true uses batch statistics; updated running stats are written to
  // *upd_mean / *upd_var when provided (caller owns the running state).
  Var batchnorm2d(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, bool train,
                  Tensor* upd_mean, Tensor* upd_var);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var attend(Var f, Var m);
  Var linear(Var x, Var weight, Var bias);
  Var temporal_collapse(Var x);
  Var reverse_rows(Var x);
  Var concat_cols(Var a, Var b);
  Var gru(Var seq, Var w_ih, Var w_hh, Var b_ih, Var b_hh);
  Var dropout(Var x, real rate, bool train, Rng& rng);
  Var bce(Var pred, Tensor target);
  Var weighted_sum(Var x, Tensor weights);

  // Reverse pass from a scalar output; seeds d(out)/d(out) with `seed` and
  // adds the resulting gradients into every bound Parameter's grad.
  void backward(Var scalar_out, real seed = real(1));

  std::size_t num_ops() const { return nodes_.size(); }
  void set_trace(bool on) { trace_on_ = on; trace_.clear(); }
  const std::vector<int>& trace() const { return trace_; }

 private:
  struct Slot {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_live = false;
    Parameter* bound = nullptr;
  };
  struct Node {
    std::function<void(Tape&)> backward;
  };

  Var make_slot(Tensor value, bool needs_grad);
  void record(std::function<void(Tape&)> fn, bool any_input_needs_grad);
  bool grad_live(Var v) const { return slots_[static_cast<std::size_t>(v.id)].grad_live; }
  void add_grad(Var v, const Tensor& g);

  std::vector<Slot> slots_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::int32_t> param_slots_;
  bool trace_on_ = false;
  std::vector<int> trace_;
};

// Max over all parameter elements of |analytic - numeric| / max(1, |a|, |n|),
// with central differences of step h on the scalar produced by `build`.
double grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params, double h = 1e-3);

}  // namespace mtfa

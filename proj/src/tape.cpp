#include "mtfa/tape.hpp"

#include <cmath>

namespace mtfa {

Var Tape::make_slot(Tensor value, bool needs_grad) {
  Slot s;
  s.value = std::move(value);
  s.needs_grad = needs_grad;
  slots_.push_back(std::move(s));
  return Var{static_cast<std::int32_t>(slots_.size() - 1)};
}

Tensor& Tape::grad(Var v) {
  Slot& s = slots_[static_cast<std::size_t>(v.id)];
  if (!s.grad_live) {
    s.grad = Tensor(s.value.shape());
    s.grad_live = true;
  }
  return s.grad;
}

void Tape::add_grad(Var v, const Tensor& g) {
  Tensor& dst = grad(v);
  for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

void Tape::record(std::function<void(Tape&)> fn, bool any_input_needs_grad) {
  if (!any_input_needs_grad) return;
  nodes_.push_back(Node{std::move(fn)});
}

Var Tape::leaf(Tensor v) { return make_slot(std::move(v), false); }

Var Tape::param(Parameter& p) {
  auto it = param_slots_.find(&p);
  if (it != param_slots_.end()) return Var{it->second};
  Var v = make_slot(p.value, true);
  slots_[static_cast<std::size_t>(v.id)].bound = &p;
  param_slots_.emplace(&p, v.id);
  return v;
}

Var Tape::conv2d(Var x, Var weight, Var bias) {
  Var out = make_slot(ops::conv2d(val(x), val(weight), val(bias)), true);
  record(
      [x, weight, bias, out](Tape& t) {
        if (!t.grad_live(out)) return;
        Tensor* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
        Tensor* gw = t.needs_grad(weight) ? &t.grad(weight) : nullptr;
        Tensor* gb = t.needs_grad(bias) ? &t.grad(bias) : nullptr;
        ops::conv2d_backward(t.val(x), t.val(weight), t.grad(out), gx, gw, gb);
      },
      needs_grad(x) || needs_grad(weight) || needs_grad(bias));
  return out;
}

Var Tape::maxpool2d(Var x) {
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Var out = make_slot(ops::maxpool2d(val(x), argmax.get()), needs_grad(x));
  record(
      [x, out, argmax](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::maxpool2d_backward(t.grad(out), *argmax, t.val(x).shape()));
      },
      needs_grad(x));
  return out;
}

Var Tape::upsample_nearest2(Var x) {
  Var out = make_slot(ops::upsample_nearest2(val(x)), needs_grad(x));
  record(
      [x, out](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::upsample_nearest2_backward(t.grad(out)));
      },
      needs_grad(x));
  return out;
}

Var Tape::batchnorm2d(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, bool train,
                      Tensor* upd_mean, Tensor* upd_var) {
  auto cache = std::make_shared<ops::BatchNormCache>();
  Var out = make_slot(
      ops::batchnorm2d(val(x), val(gamma), val(beta), running_mean, running_var, train, upd_mean, upd_var, cache.get()),
      needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
  record(
      [x, gamma, beta, out, cache, train](Tape& t) {
        if (!t.grad_live(out)) return;
        Tensor* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
        Tensor* gg = t.needs_grad(gamma) ? &t.grad(gamma) : nullptr;
        Tensor* gb = t.needs_grad(beta) ? &t.grad(beta) : nullptr;
        if (train)
          ops::batchnorm2d_backward_train(t.grad(out), t.val(gamma), *cache, gx, gg, gb);
        else
          ops::batchnorm2d_backward_eval(t.grad(out), t.val(gamma), *cache, gx, gg, gb);
      },
      needs_grad(x) || needs_grad(gamma) || needs_grad(beta));
  return out;
}

Var Tape::relu(Var x) {
  Var out = make_slot(ops::relu(val(x)), needs_grad(x));
  record(
      [x, out](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::relu_backward(t.grad(out), t.val(x)));
      },
      needs_grad(x));
  return out;
}

Var Tape::sigmoid(Var x) {
  Var out = make_slot(ops::sigmoid(val(x)), needs_grad(x));
  record(
      [x, out](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::sigmoid_backward(t.grad(out), t.val(out)));
      },
      needs_grad(x));
  return out;
}

Var Tape::tanh(Var x) {
  Var out = make_slot(ops::tanh(val(x)), needs_grad(x));
  record(
      [x, out](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::tanh_backward(t.grad(out), t.val(out)));
      },
      needs_grad(x));
  return out;
}

Var Tape::add(Var a, Var b) {
  Var out = make_slot(ops::add(val(a), val(b)), needs_grad(a) || needs_grad(b));
  record(
      [a, b, out](Tape& t) {
        if (!t.grad_live(out)) return;
        if (t.needs_grad(a)) t.add_grad(a, t.grad(out));
        if (t.needs_grad(b)) t.add_grad(b, t.grad(out));
      },
      needs_grad(a) || needs_grad(b));
  return out;
}

Var Tape::mul(Var a, Var b) {
  Var out = make_slot(ops::mul(val(a), val(b)), needs_grad(a) || needs_grad(b));
  record(
      [a, b, out](Tape& t) {
        if (!t.grad_live(out)) return;
        if (t.needs_grad(a)) t.add_grad(a, ops::mul(t.grad(out), t.val(b)));
        if (t.needs_grad(b)) t.add_grad(b, ops::mul(t.grad(out), t.val(a)));
      },
      needs_grad(a) || needs_grad(b));
  return out;
}

Var Tape::attend(Var f, Var m) {
  Var out = make_slot(ops::attend(val(f), val(m)), needs_grad(f) || needs_grad(m));
  record(
      [f, m, out](Tape& t) {
        if (!t.grad_live(out)) return;
        const Tensor& g = t.grad(out);
        if (t.needs_grad(f)) {
          Tensor gf(g.shape());
          const Tensor& mv = t.val(m);
          for (std::int64_t i = 0; i < g.numel(); ++i) gf[i] = g[i] * (real(1) + mv[i]);
          t.add_grad(f, gf);
        }
        if (t.needs_grad(m)) t.add_grad(m, ops::mul(g, t.val(f)));
      },
      needs_grad(f) || needs_grad(m));
  return out;
}

Var Tape::linear(Var x, Var weight, Var bias) {
  Var out = make_slot(ops::linear(val(x), val(weight), val(bias)), true);
  record(
      [x, weight, bias, out](Tape& t) {
        if (!t.grad_live(out)) return;
        Tensor* gx = t.needs_grad(x) ? &t.grad(x) : nullptr;
        Tensor* gw = t.needs_grad(weight) ? &t.grad(weight) : nullptr;
        Tensor* gb = t.needs_grad(bias) ? &t.grad(bias) : nullptr;
        ops::linear_backward(t.val(x), t.val(weight), t.grad(out), gx, gw, gb);
      },
      needs_grad(x) || needs_grad(weight) || needs_grad(bias));
  return out;
}

Var Tape::temporal_collapse(Var x) {
  Var out = make_slot(ops::temporal_collapse(val(x)), needs_grad(x));
  record(
      [x, out](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::temporal_collapse_backward(t.grad(out), t.val(x).shape()));
      },
      needs_grad(x));
  return out;
}

Var Tape::reverse_rows(Var x) {
  Var out = make_slot(ops::reverse_rows(val(x)), needs_grad(x));
  record(
      [x, out](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::reverse_rows(t.grad(out)));
      },
      needs_grad(x));
  return out;
}

Var Tape::concat_cols(Var a, Var b) {
  Var out = make_slot(ops::concat_cols(val(a), val(b)), needs_grad(a) || needs_grad(b));
  const std::int64_t cols_a = val(a).dim(1);
  record(
      [a, b, out, cols_a](Tape& t) {
        if (!t.grad_live(out)) return;
        Tensor* ga = t.needs_grad(a) ? &t.grad(a) : nullptr;
        Tensor* gb = t.needs_grad(b) ? &t.grad(b) : nullptr;
        ops::split_cols(t.grad(out), cols_a, ga, gb);
      },
      needs_grad(a) || needs_grad(b));
  return out;
}

Var Tape::gru(Var seq, Var w_ih, Var w_hh, Var b_ih, Var b_hh) {
  auto cache = std::make_shared<ops::GruCache>();
  ops::GruParams p{&val(w_ih), &val(w_hh), &val(b_ih), &val(b_hh)};
  Var out = make_slot(ops::gru_forward(val(seq), p, cache.get()), true);
  record(
      [seq, w_ih, w_hh, b_ih, b_hh, out, cache](Tape& t) {
        if (!t.grad_live(out)) return;
        ops::GruParams p2{&t.val(w_ih), &t.val(w_hh), &t.val(b_ih), &t.val(b_hh)};
        Tensor* gseq = t.needs_grad(seq) ? &t.grad(seq) : nullptr;
        Tensor* gwi = t.needs_grad(w_ih) ? &t.grad(w_ih) : nullptr;
        Tensor* gwh = t.needs_grad(w_hh) ? &t.grad(w_hh) : nullptr;
        Tensor* gbi = t.needs_grad(b_ih) ? &t.grad(b_ih) : nullptr;
        Tensor* gbh = t.needs_grad(b_hh) ? &t.grad(b_hh) : nullptr;
        ops::gru_backward(t.val(seq), p2, *cache, t.grad(out), gseq, gwi, gwh, gbi, gbh);
      },
      true);
  return out;
}

Var Tape::dropout(Var x, real rate, bool train, Rng& rng) {
  auto mask = std::make_shared<Tensor>();
  Var out = make_slot(ops::dropout(val(x), rate, train, rng, mask.get()), needs_grad(x));
  record(
      [x, out, mask](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(x, ops::dropout_backward(t.grad(out), *mask));
      },
      needs_grad(x));
  return out;
}

Var Tape::bce(Var pred, Tensor target) {
  auto tgt = std::make_shared<Tensor>(std::move(target));
  Var out = make_slot(Tensor::scalar(ops::bce_loss(val(pred), *tgt)), needs_grad(pred));
  record(
      [pred, out, tgt](Tape& t) {
        if (!t.grad_live(out)) return;
        t.add_grad(pred, ops::bce_loss_backward(t.val(pred), *tgt, t.grad(out)[0]));
      },
      needs_grad(pred));
  return out;
}

Var Tape::weighted_sum(Var x, Tensor weights) {
  auto w = std::make_shared<Tensor>(std::move(weights));
  Var out = make_slot(Tensor::scalar(ops::weighted_sum(val(x), *w)), needs_grad(x));
  record(
      [x, out, w](Tape& t) {
        if (!t.grad_live(out)) return;
        const real g = t.grad(out)[0];
        Tensor gx(w->shape());
        for (std::int64_t i = 0; i < w->numel(); ++i) gx[i] = g * (*w)[i];
        t.add_grad(x, gx);
      },
      needs_grad(x));
  return out;
}

void Tape::backward(Var scalar_out, real seed) {
  MTFA_REQUIRE(val(scalar_out).numel() == 1, "backward: output must be scalar");
  grad(scalar_out)[0] += seed;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (trace_on_) trace_.push_back(i);
    nodes_[static_cast<std::size_t>(i)].backward(*this);
  }
  for (auto& [p, id] : param_slots_) {
    const Slot& s = slots_[static_cast<std::size_t>(id)];
    if (!s.grad_live) continue;
    for (std::int64_t i = 0; i < s.grad.numel(); ++i) p->grad[i] += s.grad[i];
  }
}

double grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params, double h) {
  // analytic gradients
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Var out = build(t);
    t.backward(out);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  const auto eval = [&build]() {
    Tape t;
    Var out = build(t);
    return static_cast<double>(t.val(out)[0]);
  };

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const real saved = p->value[i];
      p->value[i] = saved + static_cast<real>(h);
      const double f_plus = eval();
      p->value[i] = saved - static_cast<real>(h);
      const double f_minus = eval();
      p->value[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace mtfa

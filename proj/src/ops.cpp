#include "mtfa/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

extern "C" void openblas_set_num_threads(int);

namespace mtfa::ops {

namespace {

// The GEMM shapes here (thin M, small K) run faster on one OpenBLAS thread
// than under its pthread pool, and a fixed thread count keeps results
// machine-independent.
[[maybe_unused]] const int kBlasThreads = [] {
  openblas_set_num_threads(1);
  return 1;
}();

// Reused scratch for the im2col working set; avoids refaulting fresh pages on
// every conv call.
std::vector<real>& scratch(int which, std::size_t n) {
  thread_local std::vector<real> bufs[3];
  std::vector<real>& b = bufs[which];
  if (b.size() < n) b.resize(n);
  return b;
}

// Rows per im2col block, sized so the patch buffers stay cache-resident.
std::int64_t conv_block_rows(std::int64_t c_in, std::int64_t w) {
  const std::int64_t budget = 64000;  // elements
  return std::max<std::int64_t>(1, budget / std::max<std::int64_t>(1, c_in * 9 * w));
}

// Patch matrix for output rows [y0, y1): (C_in*9) x ((y1-y0)*W). Only the
// zero-padding positions are cleared; everything else is overwritten.
void im2col_block(const Tensor& input, std::int64_t y0, std::int64_t y1, real* col) {
  const std::int64_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t rows = y1 - y0;
  const real* in = input.data();
  for (std::int64_t c = 0; c < c_in; ++c) {
    for (std::int64_t dy = 0; dy < 3; ++dy) {
      for (std::int64_t dx = 0; dx < 3; ++dx) {
        real* dst = col + (c * 9 + dy * 3 + dx) * rows * w;
        const std::int64_t s = dx - 1;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -s);
        const std::int64_t x_hi = std::min<std::int64_t>(w, w - s);
        for (std::int64_t y = y0; y < y1; ++y) {
          const std::int64_t yy = y + dy - 1;
          real* row = dst + (y - y0) * w;
          if (yy < 0 || yy >= h) {
            std::memset(row, 0, sizeof(real) * static_cast<std::size_t>(w));
            continue;
          }
          const real* src = in + (c * h + yy) * w;
          if (x_lo > 0) row[0] = real(0);
          if (x_hi < w) row[w - 1] = real(0);
          std::memcpy(row + x_lo, src + x_lo + s, sizeof(real) * static_cast<std::size_t>(x_hi - x_lo));
        }
      }
    }
  }
}

// Scatter-add of a patch-gradient block back onto the input gradient.
void col2im_add_block(const real* col, std::int64_t y0, std::int64_t y1, Tensor& grad_input) {
  const std::int64_t c_in = grad_input.dim(0), h = grad_input.dim(1), w = grad_input.dim(2);
  const std::int64_t rows = y1 - y0;
  real* out = grad_input.data();
  for (std::int64_t c = 0; c < c_in; ++c) {
    for (std::int64_t dy = 0; dy < 3; ++dy) {
      for (std::int64_t dx = 0; dx < 3; ++dx) {
        const real* src0 = col + (c * 9 + dy * 3 + dx) * rows * w;
        const std::int64_t s = dx - 1;
        const std::int64_t x_lo = std::max<std::int64_t>(0, -s);
        const std::int64_t x_hi = std::min<std::int64_t>(w, w - s);
        for (std::int64_t y = y0; y < y1; ++y) {
          const std::int64_t yy = y + dy - 1;
          if (yy < 0 || yy >= h) continue;
          const real* src = src0 + (y - y0) * w;
          real* dst = out + (c * h + yy) * w;
          for (std::int64_t x = x_lo; x < x_hi; ++x) dst[x + s] += src[x];
        }
      }
    }
  }
}

void check_conv_shapes(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  MTFA_REQUIRE(input.rank() == 3, "conv2d: input must be C x H x W, got " + input.shape_str());
  MTFA_REQUIRE(weight.rank() == 4 && weight.dim(2) == 3 && weight.dim(3) == 3,
               "conv2d: weight must be C_out x C_in x 3 x 3, got " + weight.shape_str());
  MTFA_REQUIRE(weight.dim(1) == input.dim(0),
               "conv2d: weight C_in " + weight.shape_str() + " does not match input " + input.shape_str());
  MTFA_REQUIRE(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "conv2d: bias must have C_out entries");
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, real alpha, const real* a,
          std::int64_t lda, const real* b, std::int64_t ldb, real beta, real* c, std::int64_t ldc) {
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
#ifdef MTFA_REAL_FLOAT
  cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
#else
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
#endif
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_conv_shapes(input, weight, bias);
  const std::int64_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t c_out = weight.dim(0);
  Tensor out({c_out, h, w});
  const std::int64_t block = conv_block_rows(c_in, w);
  real* col = scratch(0, static_cast<std::size_t>(c_in * 9 * block * w)).data();
  real* block_out = scratch(1, static_cast<std::size_t>(c_out * block * w)).data();
  for (std::int64_t y0 = 0; y0 < h; y0 += block) {
    const std::int64_t y1 = std::min(h, y0 + block);
    im2col_block(input, y0, y1, col);
    const std::int64_t n = (y1 - y0) * w;
    // out_block = weight_mat (C_out x C_in*9) * col (C_in*9 x n)
    gemm(false, false, c_out, n, c_in * 9, real(1), weight.data(), c_in * 9, col, n, real(0), block_out, n);
    for (std::int64_t o = 0; o < c_out; ++o) {
      real* dst = out.data() + (o * h + y0) * w;
      const real* src = block_out + o * n;
      const real b = bias[o];
      for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i] + b;
    }
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias) {
  const std::int64_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::int64_t c_out = weight.dim(0);
  if (grad_bias) {
    for (std::int64_t o = 0; o < c_out; ++o) {
      real s = 0;
      const real* g = grad_out.data() + o * h * w;
      for (std::int64_t i = 0; i < h * w; ++i) s += g[i];
      (*grad_bias)[o] += s;
    }
  }
  const std::int64_t block = conv_block_rows(c_in, w);
  real* col = scratch(0, static_cast<std::size_t>(c_in * 9 * block * w)).data();
  real* colgrad = scratch(1, static_cast<std::size_t>(c_in * 9 * block * w)).data();
  real* gblock = scratch(2, static_cast<std::size_t>(c_out * block * w)).data();
  for (std::int64_t y0 = 0; y0 < h; y0 += block) {
    const std::int64_t y1 = std::min(h, y0 + block);
    const std::int64_t n = (y1 - y0) * w;
    for (std::int64_t o = 0; o < c_out; ++o)
      std::memcpy(gblock + o * n, grad_out.data() + (o * h + y0) * w, sizeof(real) * static_cast<std::size_t>(n));
    if (grad_weight) {
      im2col_block(input, y0, y1, col);
      // dW += g_block (C_out x n) * col^T (n x C_in*9)
      gemm(false, true, c_out, c_in * 9, n, real(1), gblock, n, col, n, real(1), grad_weight->data(), c_in * 9);
    }
    if (grad_input) {
      // dcol = W^T (C_in*9 x C_out) * g_block (C_out x n)
      gemm(true, false, c_in * 9, n, c_out, real(1), weight.data(), c_in * 9, gblock, n, real(0), colgrad, n);
      col2im_add_block(colgrad, y0, y1, *grad_input);
    }
  }
}

Tensor maxpool2d(const Tensor& input, std::vector<std::int64_t>* argmax) {
  MTFA_REQUIRE(input.rank() == 3, "maxpool2d: input must be C x H x W");
  const std::int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  MTFA_REQUIRE(h % 2 == 0 && w % 2 == 0, "maxpool2d: H and W must be even, got " + input.shape_str());
  Tensor out({c, h / 2, w / 2});
  if (argmax) argmax->assign(static_cast<std::size_t>(out.numel()), 0);
  const real* in = input.data();
  std::int64_t oi = 0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* plane = in + ch * h * w;
    for (std::int64_t y = 0; y < h; y += 2) {
      for (std::int64_t x = 0; x < w; x += 2, ++oi) {
        // first occurrence in window scan order wins on ties
        std::int64_t best = y * w + x;
        real bv = plane[best];
        const std::int64_t cand[3] = {y * w + x + 1, (y + 1) * w + x, (y + 1) * w + x + 1};
        for (std::int64_t idx : cand) {
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        out[oi] = bv;
        if (argmax) (*argmax)[static_cast<std::size_t>(oi)] = ch * h * w + best;
      }
    }
  }
  return out;
}

Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::int64_t>& argmax,
                          const std::vector<std::int64_t>& input_shape) {
  Tensor grad_in(input_shape);
  for (std::int64_t i = 0; i < grad_out.numel(); ++i)
    grad_in[argmax[static_cast<std::size_t>(i)]] += grad_out[i];
  return grad_in;
}

Tensor upsample_nearest2(const Tensor& input) {
  MTFA_REQUIRE(input.rank() == 3, "upsample_nearest2: input must be C x H x W");
  const std::int64_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* plane = input.data() + ch * h * w;
    real* op = out.data() + ch * 4 * h * w;
    for (std::int64_t y = 0; y < 2 * h; ++y) {
      const real* src = plane + (y / 2) * w;
      real* dst = op + y * 2 * w;
      for (std::int64_t x = 0; x < 2 * w; ++x) dst[x] = src[x / 2];
    }
  }
  return out;
}

Tensor upsample_nearest2_backward(const Tensor& grad_out) {
  const std::int64_t c = grad_out.dim(0), h2 = grad_out.dim(1), w2 = grad_out.dim(2);
  Tensor grad_in({c, h2 / 2, w2 / 2});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* gp = grad_out.data() + ch * h2 * w2;
    real* ip = grad_in.data() + ch * (h2 / 2) * (w2 / 2);
    for (std::int64_t y = 0; y < h2; ++y) {
      const real* src = gp + y * w2;
      real* dst = ip + (y / 2) * (w2 / 2);
      for (std::int64_t x = 0; x < w2; ++x) dst[x / 2] += src[x];
    }
  }
  return grad_in;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                   const Tensor& running_var, bool train, Tensor* upd_mean, Tensor* upd_var, BatchNormCache* cache,
                   real eps, real momentum) {
  MTFA_REQUIRE(input.rank() == 3, "batchnorm2d: input must be C x H x W");
  const std::int64_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  MTFA_REQUIRE(gamma.numel() == c && beta.numel() == c, "batchnorm2d: gamma/beta must have C entries");
  Tensor out(input.shape());
  if (cache) {
    cache->x_hat = Tensor(input.shape());
    cache->inv_std.assign(static_cast<std::size_t>(c), real(0));
  }
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* x = input.data() + ch * hw;
    real* y = out.data() + ch * hw;
    real mean, var;
    if (train) {
      real s = 0;
      for (std::int64_t i = 0; i < hw; ++i) s += x[i];
      mean = s / static_cast<real>(hw);
      real v = 0;
      for (std::int64_t i = 0; i < hw; ++i) {
        const real d = x[i] - mean;
        v += d * d;
      }
      var = v / static_cast<real>(hw);
      if (upd_mean) (*upd_mean)[ch] = (real(1) - momentum) * running_mean[ch] + momentum * mean;
      if (upd_var) (*upd_var)[ch] = (real(1) - momentum) * running_var[ch] + momentum * var;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const real inv_std = real(1) / std::sqrt(var + eps);
    const real g = gamma[ch], b = beta[ch];
    if (cache) {
      cache->inv_std[static_cast<std::size_t>(ch)] = inv_std;
      real* xh = cache->x_hat.data() + ch * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = (x[i] - mean) * inv_std;
        y[i] = g * xh[i] + b;
      }
    } else {
      for (std::int64_t i = 0; i < hw; ++i) y[i] = g * (x[i] - mean) * inv_std + b;
    }
  }
  return out;
}

void batchnorm2d_backward_train(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache,
                                Tensor* grad_input, Tensor* grad_gamma, Tensor* grad_beta) {
  const std::int64_t c = grad_out.dim(0), hw = grad_out.dim(1) * grad_out.dim(2);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* g = grad_out.data() + ch * hw;
    const real* xh = cache.x_hat.data() + ch * hw;
    real sum_g = 0, sum_gx = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    if (grad_gamma) (*grad_gamma)[ch] += sum_gx;
    if (grad_beta) (*grad_beta)[ch] += sum_g;
    if (grad_input) {
      const real inv_n = real(1) / static_cast<real>(hw);
      const real scale = gamma[ch] * cache.inv_std[static_cast<std::size_t>(ch)];
      real* gi = grad_input->data() + ch * hw;
      const real mg = sum_g * inv_n, mgx = sum_gx * inv_n;
      for (std::int64_t i = 0; i < hw; ++i) gi[i] += scale * (g[i] - mg - xh[i] * mgx);
    }
  }
}

void batchnorm2d_backward_eval(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache,
                               Tensor* grad_input, Tensor* grad_gamma, Tensor* grad_beta) {
  const std::int64_t c = grad_out.dim(0), hw = grad_out.dim(1) * grad_out.dim(2);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* g = grad_out.data() + ch * hw;
    const real* xh = cache.x_hat.data() + ch * hw;
    const real scale = gamma[ch] * cache.inv_std[static_cast<std::size_t>(ch)];
    real sum_g = 0, sum_gx = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    if (grad_gamma) (*grad_gamma)[ch] += sum_gx;
    if (grad_beta) (*grad_beta)[ch] += sum_g;
    if (grad_input) {
      real* gi = grad_input->data() + ch * hw;
      for (std::int64_t i = 0; i < hw; ++i) gi[i] += scale * g[i];
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > real(0) ? x[i] : real(0);
  return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  Tensor g(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) g[i] = x[i] > real(0) ? grad_out[i] : real(0);
  return g;
}

Tensor sigmoid(const Tensor& x) {
  // saturated values are nudged to the open interval's representable edge
  const real hi = std::nextafter(real(1), real(0));
  const real lo = std::numeric_limits<real>::denorm_min();
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    y[i] = std::clamp(real(1) / (real(1) + std::exp(-x[i])), lo, hi);
  return y;
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y) {
  Tensor g(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) g[i] = grad_out[i] * y[i] * (real(1) - y[i]);
  return g;
}

Tensor tanh(const Tensor& x) {
  const real hi = std::nextafter(real(1), real(0));
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::clamp(std::tanh(x[i]), -hi, hi);
  return y;
}

Tensor tanh_backward(const Tensor& grad_out, const Tensor& y) {
  Tensor g(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) g[i] = grad_out[i] * (real(1) - y[i] * y[i]);
  return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
  MTFA_REQUIRE(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  MTFA_REQUIRE(a.same_shape(b), "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
  return y;
}

Tensor attend(const Tensor& f, const Tensor& m) {
  MTFA_REQUIRE(f.same_shape(m), "attend: F and M shapes differ: " + f.shape_str() + " vs " + m.shape_str());
  Tensor a(f.shape());
  for (std::int64_t i = 0; i < f.numel(); ++i) a[i] = (real(1) + m[i]) * f[i];
  return a;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  MTFA_REQUIRE(x.rank() == 2 && weight.rank() == 2, "linear: x and weight must be 2-D");
  MTFA_REQUIRE(x.dim(1) == weight.dim(1), "linear: inner dimension mismatch, x " + x.shape_str() + " weight " +
                                              weight.shape_str());
  const std::int64_t t = x.dim(0), n_out = weight.dim(0), n_in = weight.dim(1);
  MTFA_REQUIRE(bias.numel() == n_out, "linear: bias size mismatch");
  Tensor out({t, n_out});
  gemm(false, true, t, n_out, n_in, real(1), x.data(), n_in, weight.data(), n_in, real(0), out.data(), n_out);
  for (std::int64_t r = 0; r < t; ++r) {
    real* row = out.data() + r * n_out;
    for (std::int64_t c = 0; c < n_out; ++c) row[c] += bias[c];
  }
  return out;
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_weight, Tensor* grad_bias) {
  const std::int64_t t = x.dim(0), n_in = x.dim(1), n_out = weight.dim(0);
  if (grad_weight)
    gemm(true, false, n_out, n_in, t, real(1), grad_out.data(), n_out, x.data(), n_in, real(1), grad_weight->data(),
         n_in);
  if (grad_bias) {
    for (std::int64_t r = 0; r < t; ++r)
      for (std::int64_t c = 0; c < n_out; ++c) (*grad_bias)[c] += grad_out.at2(r, c);
  }
  if (grad_x)
    gemm(false, false, t, n_in, n_out, real(1), grad_out.data(), n_out, weight.data(), n_in, real(1), grad_x->data(),
         n_in);
}

Tensor temporal_collapse(const Tensor& x) {
  MTFA_REQUIRE(x.rank() == 3, "temporal_collapse: input must be C x T x D");
  const std::int64_t c = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor out({t, c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t r = 0; r < t; ++r) {
      const real* row = x.data() + (ch * t + r) * d;
      real s = 0;
      for (std::int64_t i = 0; i < d; ++i) s += row[i];
      out.at2(r, ch) = s / static_cast<real>(d);
    }
  }
  return out;
}

Tensor temporal_collapse_backward(const Tensor& grad_out, const std::vector<std::int64_t>& input_shape) {
  const std::int64_t c = input_shape[0], t = input_shape[1], d = input_shape[2];
  Tensor g(input_shape);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t r = 0; r < t; ++r) {
      const real v = grad_out.at2(r, ch) / static_cast<real>(d);
      real* row = g.data() + (ch * t + r) * d;
      for (std::int64_t i = 0; i < d; ++i) row[i] += v;
    }
  }
  return g;
}

Tensor reverse_rows(const Tensor& x) {
  MTFA_REQUIRE(x.rank() == 2, "reverse_rows: input must be 2-D");
  const std::int64_t t = x.dim(0), n = x.dim(1);
  Tensor y(x.shape());
  for (std::int64_t r = 0; r < t; ++r)
    std::memcpy(y.data() + (t - 1 - r) * n, x.data() + r * n, sizeof(real) * static_cast<std::size_t>(n));
  return y;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  MTFA_REQUIRE(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_cols: row count mismatch");
  const std::int64_t t = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor y({t, ca + cb});
  for (std::int64_t r = 0; r < t; ++r) {
    std::memcpy(y.data() + r * (ca + cb), a.data() + r * ca, sizeof(real) * static_cast<std::size_t>(ca));
    std::memcpy(y.data() + r * (ca + cb) + ca, b.data() + r * cb, sizeof(real) * static_cast<std::size_t>(cb));
  }
  return y;
}

void split_cols(const Tensor& grad_out, std::int64_t cols_a, Tensor* grad_a, Tensor* grad_b) {
  const std::int64_t t = grad_out.dim(0), total = grad_out.dim(1);
  for (std::int64_t r = 0; r < t; ++r) {
    const real* row = grad_out.data() + r * total;
    if (grad_a)
      for (std::int64_t c = 0; c < cols_a; ++c) grad_a->at2(r, c) += row[c];
    if (grad_b)
      for (std::int64_t c = cols_a; c < total; ++c) grad_b->at2(r, c - cols_a) += row[c];
  }
}

Tensor gru_forward(const Tensor& seq, const GruParams& p, GruCache* cache) {
  MTFA_REQUIRE(seq.rank() == 2, "gru: input must be T x N");
  const std::int64_t t_len = seq.dim(0), n_in = seq.dim(1);
  const std::int64_t u3 = p.w_ih->dim(0);
  MTFA_REQUIRE(u3 % 3 == 0 && p.w_ih->dim(1) == n_in, "gru: w_ih must be 3U x N_in");
  const std::int64_t u = u3 / 3;
  MTFA_REQUIRE(p.w_hh->dim(0) == u3 && p.w_hh->dim(1) == u, "gru: w_hh must be 3U x U");

  // Input-side gate preactivations for the whole sequence in one GEMM.
  Tensor xg = linear(seq, *p.w_ih, *p.b_ih);  // T x 3U

  Tensor hidden({t_len, u});
  Tensor r({t_len, u}), z({t_len, u}), n({t_len, u}), hn({t_len, u});
  std::vector<real> h_prev(static_cast<std::size_t>(u), real(0));
  std::vector<real> hg(static_cast<std::size_t>(u3));
  for (std::int64_t step = 0; step < t_len; ++step) {
    // hidden-side preactivations: w_hh * h_prev + b_hh
    for (std::int64_t i = 0; i < u3; ++i) {
      const real* wrow = p.w_hh->data() + i * u;
      real s = (*p.b_hh)[i];
      for (std::int64_t j = 0; j < u; ++j) s += wrow[j] * h_prev[static_cast<std::size_t>(j)];
      hg[static_cast<std::size_t>(i)] = s;
    }
    const real* xrow = xg.data() + step * u3;
    for (std::int64_t j = 0; j < u; ++j) {
      const real rv = real(1) / (real(1) + std::exp(-(xrow[j] + hg[static_cast<std::size_t>(j)])));
      const real zv = real(1) / (real(1) + std::exp(-(xrow[u + j] + hg[static_cast<std::size_t>(u + j)])));
      const real hnv = hg[static_cast<std::size_t>(2 * u + j)];
      const real nv = std::tanh(xrow[2 * u + j] + rv * hnv);
      const real hv = (real(1) - zv) * nv + zv * h_prev[static_cast<std::size_t>(j)];
      r.at2(step, j) = rv;
      z.at2(step, j) = zv;
      n.at2(step, j) = nv;
      hn.at2(step, j) = hnv;
      hidden.at2(step, j) = hv;
    }
    std::memcpy(h_prev.data(), hidden.data() + step * u, sizeof(real) * static_cast<std::size_t>(u));
  }
  if (cache) {
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->n = std::move(n);
    cache->hn = std::move(hn);
    cache->hidden = hidden;
  }
  return hidden;
}

void gru_backward(const Tensor& seq, const GruParams& p, const GruCache& cache, const Tensor& grad_out,
                  Tensor* grad_seq, Tensor* grad_w_ih, Tensor* grad_w_hh, Tensor* grad_b_ih, Tensor* grad_b_hh) {
  const std::int64_t t_len = seq.dim(0), n_in = seq.dim(1);
  const std::int64_t u = p.w_hh->dim(1), u3 = 3 * u;
  std::vector<real> carry(static_cast<std::size_t>(u), real(0));  // dL/dh_t flowing backwards
  std::vector<real> dx(static_cast<std::size_t>(u3)), dh(static_cast<std::size_t>(u3));
  for (std::int64_t step = t_len - 1; step >= 0; --step) {
    for (std::int64_t j = 0; j < u; ++j) {
      const real g = grad_out.at2(step, j) + carry[static_cast<std::size_t>(j)];
      const real rv = cache.r.at2(step, j), zv = cache.z.at2(step, j), nv = cache.n.at2(step, j),
                 hnv = cache.hn.at2(step, j);
      const real hprev = step > 0 ? cache.hidden.at2(step - 1, j) : real(0);
      const real dn_pre = g * (real(1) - zv) * (real(1) - nv * nv);
      const real dz_pre = g * (hprev - nv) * zv * (real(1) - zv);
      const real dr_pre = dn_pre * hnv * rv * (real(1) - rv);
      dx[static_cast<std::size_t>(j)] = dr_pre;
      dx[static_cast<std::size_t>(u + j)] = dz_pre;
      dx[static_cast<std::size_t>(2 * u + j)] = dn_pre;
      dh[static_cast<std::size_t>(j)] = dr_pre;
      dh[static_cast<std::size_t>(u + j)] = dz_pre;
      dh[static_cast<std::size_t>(2 * u + j)] = dn_pre * rv;
      carry[static_cast<std::size_t>(j)] = g * zv;
    }
    // parameter gradients: outer products with x_t and h_{t-1}
    const real* xrow = seq.data() + step * n_in;
    for (std::int64_t i = 0; i < u3; ++i) {
      const real di = dx[static_cast<std::size_t>(i)];
      if (grad_w_ih && di != real(0)) {
        real* wrow = grad_w_ih->data() + i * n_in;
        for (std::int64_t j = 0; j < n_in; ++j) wrow[j] += di * xrow[j];
      }
      if (grad_b_ih) (*grad_b_ih)[i] += di;
      const real dhi = dh[static_cast<std::size_t>(i)];
      if (grad_b_hh) (*grad_b_hh)[i] += dhi;
      if (grad_w_hh && step > 0 && dhi != real(0)) {
        const real* hrow = cache.hidden.data() + (step - 1) * u;
        real* wrow = grad_w_hh->data() + i * u;
        for (std::int64_t j = 0; j < u; ++j) wrow[j] += dhi * hrow[j];
      }
    }
    if (grad_seq) {
      real* gx = grad_seq->data() + step * n_in;
      for (std::int64_t i = 0; i < u3; ++i) {
        const real di = dx[static_cast<std::size_t>(i)];
        if (di == real(0)) continue;
        const real* wrow = p.w_ih->data() + i * n_in;
        for (std::int64_t j = 0; j < n_in; ++j) gx[j] += di * wrow[j];
      }
    }
    // dL/dh_{t-1} through the hidden-side preactivations
    for (std::int64_t i = 0; i < u3; ++i) {
      const real dhi = dh[static_cast<std::size_t>(i)];
      if (dhi == real(0)) continue;
      const real* wrow = p.w_hh->data() + i * u;
      for (std::int64_t j = 0; j < u; ++j) carry[static_cast<std::size_t>(j)] += dhi * wrow[j];
    }
  }
}

Tensor dropout(const Tensor& x, real rate, bool train, Rng& rng, Tensor* mask) {
  MTFA_REQUIRE(rate >= real(0) && rate < real(1), "dropout: rate must be in [0, 1)");
  if (!train || rate == real(0)) {
    if (mask) *mask = Tensor::full(x.shape(), real(1));
    return x;
  }
  const real keep_scale = real(1) / (real(1) - rate);
  Tensor m(x.shape());
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const real keep = static_cast<real>(rng.uniform()) >= rate ? keep_scale : real(0);
    m[i] = keep;
    y[i] = x[i] * keep;
  }
  if (mask) *mask = std::move(m);
  return y;
}

Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask) { return mul(grad_out, mask); }

real bce_loss(const Tensor& pred, const Tensor& target) {
  MTFA_REQUIRE(pred.same_shape(target), "bce_loss: shape mismatch");
  const std::int64_t n = pred.numel();
  MTFA_REQUIRE(n > 0, "bce_loss: empty input");
  real acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const real y = target[i];
    MTFA_REQUIRE(y == real(0) || y == real(1), "bce_loss: target values must be 0 or 1");
    const real p = std::clamp(pred[i], kBceClamp, real(1) - kBceClamp);
    acc -= y * std::log(p) + (real(1) - y) * std::log(real(1) - p);
  }
  return acc / static_cast<real>(n);
}

Tensor bce_loss_backward(const Tensor& pred, const Tensor& target, real grad_out) {
  const std::int64_t n = pred.numel();
  Tensor g(pred.shape());
  const real scale = grad_out / static_cast<real>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    if (pred[i] <= kBceClamp || pred[i] >= real(1) - kBceClamp) continue;  // clamped region
    const real p = pred[i], y = target[i];
    g[i] = scale * (-y / p + (real(1) - y) / (real(1) - p));
  }
  return g;
}

real weighted_sum(const Tensor& x, const Tensor& weights) {
  MTFA_REQUIRE(x.same_shape(weights), "weighted_sum: shape mismatch");
  real s = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) s += x[i] * weights[i];
  return s;
}

}  // namespace mtfa::ops

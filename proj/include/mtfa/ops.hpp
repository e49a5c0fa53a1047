#pragma once

#include <cstdint>
#include <vector>

#include "mtfa/rng.hpp"
#include "mtfa/tensor.hpp"

// Stateless forward/backward kernels. The autodiff tape and the eval-mode
// network both call into these; the tape additionally wires the backward
// halves together.
namespace mtfa::ops {

// --- convolution (3x3, stride 1, zero padding 1; spatial size preserved) ---

// input C_in x H x W, weight C_out x C_in x 3 x 3, bias C_out.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);
// Gradients accumulate into the non-null outputs (callers pre-zero them).
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, Tensor* grad_input,
                     Tensor* grad_weight, Tensor* grad_bias);

// --- pooling / upsampling ---

// 2x2 max pooling, stride 2. argmax stores the flat input index of each
// window maximum (first occurrence in row-major window scan order).
Tensor maxpool2d(const Tensor& input, std::vector<std::int64_t>* argmax = nullptr);
Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::int64_t>& argmax,
                          const std::vector<std::int64_t>& input_shape);

// Nearest-neighbour 2x upsampling: C x H x W -> C x 2H x 2W.
Tensor upsample_nearest2(const Tensor& input);
Tensor upsample_nearest2_backward(const Tensor& grad_out);

// --- batch normalization (per channel over H x W) ---

struct BatchNormCache {
  Tensor x_hat;          // normalized input
  std::vector<real> inv_std;  // per channel
};

// train=true normalizes with batch statistics and, when running_* are given,
// updates them in place with the configured momentum (biased variance).
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                   const Tensor& running_var, bool train, Tensor* upd_mean, Tensor* upd_var,
                   BatchNormCache* cache, real eps = real(1e-5), real momentum = real(0.1));
void batchnorm2d_backward_train(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache,
                                Tensor* grad_input, Tensor* grad_gamma, Tensor* grad_beta);
void batchnorm2d_backward_eval(const Tensor& grad_out, const Tensor& gamma, const BatchNormCache& cache,
                               Tensor* grad_input, Tensor* grad_gamma, Tensor* grad_beta);

// --- elementwise activations ---

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y);  // y = sigmoid(x)
Tensor tanh(const Tensor& x);
Tensor tanh_backward(const Tensor& grad_out, const Tensor& y);  // y = tanh(x)

// --- elementwise arithmetic ---

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Residual attention combination A = (1 + M) * F, elementwise.
Tensor attend(const Tensor& f, const Tensor& m);

// --- linear algebra ---

// out = x * weight^T + bias; x is T x N_in, weight N_out x N_in, bias N_out.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, Tensor* grad_x,
                     Tensor* grad_weight, Tensor* grad_bias);

// C = A * B (row-major GEMM wrapper). transA/transB fold in transposes.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, real alpha, const real* a,
          std::int64_t lda, const real* b, std::int64_t ldb, real beta, real* c, std::int64_t ldc);

// --- shape ops ---

// C x T x D -> T x C, mean over the D axis.
Tensor temporal_collapse(const Tensor& x);
Tensor temporal_collapse_backward(const Tensor& grad_out, const std::vector<std::int64_t>& input_shape);

Tensor reverse_rows(const Tensor& x);
Tensor concat_cols(const Tensor& a, const Tensor& b);
void split_cols(const Tensor& grad_out, std::int64_t cols_a, Tensor* grad_a, Tensor* grad_b);

// --- GRU (single layer, forward direction, h0 = 0) ---

struct GruParams {
  const Tensor* w_ih;  // 3U x N_in, gate order [r | z | n]
  const Tensor* w_hh;  // 3U x U
  const Tensor* b_ih;  // 3U
  const Tensor* b_hh;  // 3U
};

struct GruCache {
  Tensor r, z, n, hn;  // T x U each; hn is the hidden-side candidate term U_n h + b_hn
  Tensor hidden;       // T x U, post-step hidden states
};

// seq is T x N_in; returns T x U hidden states.
Tensor gru_forward(const Tensor& seq, const GruParams& p, GruCache* cache);
void gru_backward(const Tensor& seq, const GruParams& p, const GruCache& cache, const Tensor& grad_out,
                  Tensor* grad_seq, Tensor* grad_w_ih, Tensor* grad_w_hh, Tensor* grad_b_ih, Tensor* grad_b_hh);

// --- dropout (inverted; eval mode is the identity) ---

Tensor dropout(const Tensor& x, real rate, bool train, Rng& rng, Tensor* mask);
Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask);

// --- losses / reductions ---

inline constexpr real kBceClamp = real(1e-7);

// Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7].
real bce_loss(const Tensor& pred, const Tensor& target);
Tensor bce_loss_backward(const Tensor& pred, const Tensor& target, real grad_out);

real weighted_sum(const Tensor& x, const Tensor& weights);

}  // namespace mtfa::ops

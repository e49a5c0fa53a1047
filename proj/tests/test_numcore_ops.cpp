#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtfa/ops.hpp"

using namespace mtfa;

namespace {

Tensor t3(std::int64_t c, std::int64_t h, std::int64_t w, std::vector<real> v) {
  return Tensor({c, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Tensor input = t3(1, 2, 2, {1, 2, 3, 4});
  Tensor weight({1, 1, 3, 3});
  weight[4] = 1;  // delta at the kernel center
  Tensor bias({1});
  Tensor out = ops::conv2d(input, weight, bias);
  CHECK(out.shape() == std::vector<std::int64_t>{1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(input[i]));
}

TEST_CASE("conv2d all-ones kernel counts the zero-padded window") {
  Tensor input = Tensor::full({1, 3, 3}, 1);
  Tensor weight = Tensor::full({1, 1, 3, 3}, 1);
  Tensor bias({1});
  Tensor out = ops::conv2d(input, weight, bias);
  CHECK(out.at3(0, 1, 1) == doctest::Approx(9));
  CHECK(out.at3(0, 0, 0) == doctest::Approx(4));
  CHECK(out.at3(0, 0, 2) == doctest::Approx(4));
  CHECK(out.at3(0, 2, 0) == doctest::Approx(4));
  CHECK(out.at3(0, 2, 2) == doctest::Approx(4));
}

TEST_CASE("conv2d zero kernel yields the bias") {
  Rng rng(7);
  Tensor input = Tensor::uniform({3, 4, 6}, -1, 1, rng);
  Tensor weight({2, 3, 3, 3});
  Tensor bias({2}, {real(0.5), real(-1.25)});
  Tensor out = ops::conv2d(input, weight, bias);
  for (std::int64_t i = 0; i < 24; ++i) {
    CHECK(out[i] == doctest::Approx(0.5));
    CHECK(out[24 + i] == doctest::Approx(-1.25));
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor input({2, 4, 4});
  Tensor weight({1, 3, 3, 3});
  Tensor bias({1});
  CHECK_THROWS_AS(ops::conv2d(input, weight, bias), ContractError);
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(11);
  Tensor x = Tensor::uniform({2, 8, 6}, -1, 1, rng);
  Tensor y = Tensor::uniform({2, 8, 6}, -1, 1, rng);
  Tensor w = Tensor::uniform({3, 2, 3, 3}, -1, 1, rng);
  Tensor zero_bias({3});
  const real a = real(1.7), b = real(-0.4);
  Tensor combo({2, 8, 6});
  for (std::int64_t i = 0; i < combo.numel(); ++i) combo[i] = a * x[i] + b * y[i];
  Tensor lhs = ops::conv2d(combo, w, zero_bias);
  Tensor cx = ops::conv2d(x, w, zero_bias);
  Tensor cy = ops::conv2d(y, w, zero_bias);
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    const real rhs = a * cx[i] + b * cy[i];
    const real denom = std::max<real>(1e-30, std::abs(rhs));
    CHECK(std::abs(lhs[i] - rhs) / denom < 1e-10);
  }
}

TEST_CASE("maxpool2d basics") {
  Tensor x = t3(1, 2, 2, {1, 2, 3, 4});
  Tensor out = ops::maxpool2d(x);
  CHECK(out.numel() == 1);
  CHECK(out[0] == 4);

  // 4x4 ramp
  std::vector<real> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<real>(i);
  Tensor r = t3(1, 4, 4, ramp);
  Tensor pooled = ops::maxpool2d(r);
  CHECK(pooled[0] == 5);
  CHECK(pooled[1] == 7);
  CHECK(pooled[2] == 13);
  CHECK(pooled[3] == 15);
}

TEST_CASE("maxpool2d tie-break routes gradient to the first window element") {
  Tensor x = Tensor::full({1, 2, 2}, 5);
  std::vector<std::int64_t> argmax;
  Tensor out = ops::maxpool2d(x, &argmax);
  CHECK(out[0] == 5);
  CHECK(argmax[0] == 0);
  Tensor grad_out({1, 1, 1}, {1});
  Tensor grad_in = ops::maxpool2d_backward(grad_out, argmax, x.shape());
  CHECK(grad_in[0] == 1);
  CHECK(grad_in[1] == 0);
  CHECK(grad_in[2] == 0);
  CHECK(grad_in[3] == 0);
}

TEST_CASE("maxpool2d rejects odd spatial sizes") {
  CHECK_THROWS_AS(ops::maxpool2d(Tensor({1, 3, 4})), ContractError);
  CHECK_THROWS_AS(ops::maxpool2d(Tensor({1, 4, 5})), ContractError);
}

TEST_CASE("upsample_nearest2 repeats each element four times") {
  Tensor x = t3(1, 2, 2, {1, 2, 3, 4});
  Tensor up = ops::upsample_nearest2(x);
  const std::vector<real> expected = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  REQUIRE(up.numel() == 16);
  for (int i = 0; i < 16; ++i) CHECK(up[i] == expected[static_cast<std::size_t>(i)]);

  // backward of all-ones output gradient -> all fours
  Tensor g = ops::upsample_nearest2_backward(Tensor::full({1, 4, 4}, 1));
  for (int i = 0; i < 4; ++i) CHECK(g[i] == 4);
}

TEST_CASE("maxpool2d after upsample_nearest2 is the identity") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::uniform({2, 6, 4}, -5, 5, rng);
    Tensor round = ops::maxpool2d(ops::upsample_nearest2(x));
    REQUIRE(round.same_shape(x));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(round[i] == x[i]);
  }
}

TEST_CASE("batchnorm2d constant channel maps to zero in train mode") {
  Tensor x = Tensor::full({1, 2, 2}, 3);
  Tensor gamma = Tensor::full({1}, 1), beta({1});
  Tensor rm({1}), rv = Tensor::full({1}, 1);
  Tensor out = ops::batchnorm2d(x, gamma, beta, rm, rv, true, nullptr, nullptr, nullptr);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0));
}

TEST_CASE("batchnorm2d gamma 0 beta 5 is constant 5") {
  Rng rng(9);
  Tensor x = Tensor::uniform({2, 4, 4}, -3, 3, rng);
  Tensor gamma({2}), beta = Tensor::full({2}, 5);
  Tensor rm({2}), rv = Tensor::full({2}, 1);
  Tensor out = ops::batchnorm2d(x, gamma, beta, rm, rv, true, nullptr, nullptr, nullptr);
  for (std::int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(5));
}

TEST_CASE("batchnorm2d standardizes a two-value channel") {
  Tensor x = t3(1, 1, 2, {1, 3});
  Tensor gamma = Tensor::full({1}, 1), beta({1});
  Tensor rm({1}), rv = Tensor::full({1}, 1);
  Tensor out = ops::batchnorm2d(x, gamma, beta, rm, rv, true, nullptr, nullptr, nullptr);
  CHECK(out[0] == doctest::Approx(-1).epsilon(1e-3));
  CHECK(out[1] == doctest::Approx(1).epsilon(1e-3));
}

TEST_CASE("batchnorm2d eval mode uses initialized running stats") {
  Tensor x = t3(1, 1, 2, {1, 3});
  Tensor gamma = Tensor::full({1}, 1), beta({1});
  Tensor rm({1}), rv = Tensor::full({1}, 1);  // untrained: mean 0, var 1
  Tensor out = ops::batchnorm2d(x, gamma, beta, rm, rv, false, nullptr, nullptr, nullptr);
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(out[1] == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("activation values") {
  Tensor x({3}, {0, -3, 3});
  Tensor s = ops::sigmoid(x);
  CHECK(s[0] == doctest::Approx(0.5));
  Tensor r = ops::relu(x);
  CHECK(r[0] == 0);
  CHECK(r[1] == 0);
  CHECK(r[2] == 3);
  Tensor ln3({1}, {static_cast<real>(std::log(3.0))});
  CHECK(ops::sigmoid(ln3)[0] == doctest::Approx(0.75));
}

TEST_CASE("sigmoid and tanh stay strictly inside their ranges") {
  Tensor x({6}, {-100, -5, -0.1, 0.1, 5, 100});
  Tensor s = ops::sigmoid(x);
  Tensor t = ops::tanh(x);
  for (int i = 0; i < 6; ++i) {
    CHECK(s[i] > 0);
    CHECK(s[i] < 1);
    CHECK(t[i] > -1);
    CHECK(t[i] < 1);
  }
}

TEST_CASE("linear examples") {
  // identity weight, zero bias
  Tensor x({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor zero2({2});
  Tensor out = ops::linear(x, eye, zero2);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(x[i]));

  // [1,2] * [[1,1]]^T + [1] = [4]
  Tensor v({1, 2}, {1, 2});
  Tensor w({1, 2}, {1, 1});
  Tensor b({1}, {1});
  CHECK(ops::linear(v, w, b)[0] == doctest::Approx(4));

  // zero weight -> rows equal bias
  Tensor zw({3, 2});
  Tensor zb({3}, {7, 8, 9});
  Tensor rows = ops::linear(x, zw, zb);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) CHECK(rows.at2(r, c) == doctest::Approx(zb[c]));

  CHECK_THROWS_AS(ops::linear(Tensor({2, 3}), Tensor({4, 2}), Tensor({4})), ContractError);
}

TEST_CASE("gru with zero parameters outputs zeros") {
  Tensor seq({5, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 1, 1, 2, 2, 2});
  Tensor w_ih({6, 3}), w_hh({6, 2}), b_ih({6}), b_hh({6});
  ops::GruParams p{&w_ih, &w_hh, &b_ih, &b_hh};
  Tensor h = ops::gru_forward(seq, p, nullptr);
  REQUIRE(h.shape() == std::vector<std::int64_t>{5, 2});
  for (std::int64_t i = 0; i < h.numel(); ++i) CHECK(h[i] == doctest::Approx(0));
}

TEST_CASE("gru forward equals backward direction for a single step") {
  Rng rng(21);
  Tensor seq = Tensor::uniform({1, 4}, -1, 1, rng);
  Tensor w_ih = Tensor::uniform({9, 4}, -0.5, 0.5, rng);
  Tensor w_hh = Tensor::uniform({9, 3}, -0.5, 0.5, rng);
  Tensor b_ih = Tensor::uniform({9}, -0.5, 0.5, rng);
  Tensor b_hh = Tensor::uniform({9}, -0.5, 0.5, rng);
  ops::GruParams p{&w_ih, &w_hh, &b_ih, &b_hh};
  Tensor fwd = ops::gru_forward(seq, p, nullptr);
  Tensor bwd = ops::reverse_rows(ops::gru_forward(ops::reverse_rows(seq), p, nullptr));
  for (std::int64_t i = 0; i < fwd.numel(); ++i) CHECK(fwd[i] == doctest::Approx(bwd[i]));
}

TEST_CASE("dropout") {
  Rng rng(5);
  Tensor x = Tensor::full({100}, 1);

  SUBCASE("rate 0 is the identity in both modes") {
    for (bool train : {false, true}) {
      Tensor y = ops::dropout(x, 0, train, rng, nullptr);
      for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 1);
    }
  }
  SUBCASE("eval mode is the identity at any rate") {
    Tensor y = ops::dropout(x, real(0.7), false, rng, nullptr);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 1);
  }
  SUBCASE("inverted dropout is unbiased") {
    Tensor big = Tensor::full({100000}, 1);
    Tensor y = ops::dropout(big, real(0.5), true, rng, nullptr);
    double mean = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) mean += static_cast<double>(y[i]);
    mean /= static_cast<double>(y.numel());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
  }
  SUBCASE("rate 1 is rejected") { CHECK_THROWS_AS(ops::dropout(x, 1, true, rng, nullptr), ContractError); }
}

TEST_CASE("bce_loss examples") {
  Tensor half({1}, {real(0.5)});
  Tensor one({1}, {1});
  CHECK(ops::bce_loss(half, one) == doctest::Approx(std::log(2.0)));

  Tensor pred({2}, {real(0.5), real(0.5)});
  Tensor target({2}, {0, 1});
  CHECK(ops::bce_loss(pred, target) == doctest::Approx(std::log(2.0)));

  // perfect predictions saturate at the clamp
  Tensor exact({2}, {0, 1});
  CHECK(ops::bce_loss(exact, target) < 1.7e-7 * std::abs(std::log(1e-7)));

  Tensor bad({1}, {real(0.5)});
  Tensor bad_target({1}, {real(0.5)});
  CHECK_THROWS_AS(ops::bce_loss(bad, bad_target), ContractError);
}

TEST_CASE("attend arithmetic and bounds") {
  Tensor f({1}, {2});
  Tensor m({1}, {real(0.5)});
  CHECK(ops::attend(f, m)[0] == doctest::Approx(3.0));

  Tensor zero_mask({1});
  CHECK(ops::attend(f, zero_mask)[0] == doctest::Approx(2.0));  // A == F
  Tensor one_mask = Tensor::full({1}, 1);
  CHECK(ops::attend(f, one_mask)[0] == doctest::Approx(4.0));  // A == 2F

  CHECK_THROWS_AS(ops::attend(Tensor({2}), Tensor({3})), ContractError);
}

TEST_CASE("temporal_collapse means over the last axis") {
  Tensor x = t3(1, 2, 2, {1, 3, 5, 7});
  Tensor out = ops::temporal_collapse(x);
  REQUIRE(out.shape() == std::vector<std::int64_t>{2, 1});
  CHECK(out[0] == doctest::Approx(2));
  CHECK(out[1] == doctest::Approx(6));

  Tensor c = Tensor::full({3, 4, 5}, real(2.5));
  Tensor cc = ops::temporal_collapse(c);
  REQUIRE(cc.shape() == std::vector<std::int64_t>{4, 3});
  for (std::int64_t i = 0; i < cc.numel(); ++i) CHECK(cc[i] == doctest::Approx(2.5));
}

TEST_CASE("op output shapes follow the declared formulas") {
  Rng rng(33);
  for (int trial = 0; trial < 25; ++trial) {
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(4));
    const std::int64_t h = 2 * (1 + static_cast<std::int64_t>(rng.below(6)));
    const std::int64_t w = 2 * (1 + static_cast<std::int64_t>(rng.below(6)));
    const std::int64_t co = 1 + static_cast<std::int64_t>(rng.below(4));
    Tensor x = Tensor::uniform({c, h, w}, -1, 1, rng);
    Tensor wt = Tensor::uniform({co, c, 3, 3}, -1, 1, rng);
    Tensor b = Tensor::uniform({co}, -1, 1, rng);
    CHECK(ops::conv2d(x, wt, b).shape() == std::vector<std::int64_t>{co, h, w});
    CHECK(ops::maxpool2d(x).shape() == std::vector<std::int64_t>{c, h / 2, w / 2});
    CHECK(ops::upsample_nearest2(x).shape() == std::vector<std::int64_t>{c, 2 * h, 2 * w});
    CHECK(ops::temporal_collapse(x).shape() == std::vector<std::int64_t>{h, c});

    const std::int64_t n_in = 1 + static_cast<std::int64_t>(rng.below(5));
    const std::int64_t n_out = 1 + static_cast<std::int64_t>(rng.below(5));
    Tensor lx = Tensor::uniform({h, n_in}, -1, 1, rng);
    Tensor lw = Tensor::uniform({n_out, n_in}, -1, 1, rng);
    Tensor lb = Tensor::uniform({n_out}, -1, 1, rng);
    CHECK(ops::linear(lx, lw, lb).shape() == std::vector<std::int64_t>{h, n_out});

    const std::int64_t u = 1 + static_cast<std::int64_t>(rng.below(4));
    Tensor w_ih = Tensor::uniform({3 * u, n_in}, -1, 1, rng);
    Tensor w_hh = Tensor::uniform({3 * u, u}, -1, 1, rng);
    Tensor b_ih = Tensor::uniform({3 * u}, -1, 1, rng);
    Tensor b_hh = Tensor::uniform({3 * u}, -1, 1, rng);
    ops::GruParams p{&w_ih, &w_hh, &b_ih, &b_hh};
    CHECK(ops::gru_forward(lx, p, nullptr).shape() == std::vector<std::int64_t>{h, u});
  }
}

TEST_CASE("forward ops preserve finiteness and determinism") {
  Rng rng(44);
  Tensor x = Tensor::uniform({2, 8, 8}, -10, 10, rng);
  Tensor w = Tensor::uniform({3, 2, 3, 3}, -2, 2, rng);
  Tensor b = Tensor::uniform({3}, -2, 2, rng);
  Tensor out1 = ops::conv2d(x, w, b);
  Tensor out2 = ops::conv2d(x, w, b);
  CHECK(out1.all_finite());
  for (std::int64_t i = 0; i < out1.numel(); ++i) CHECK(out1[i] == out2[i]);

  Rng rng_a(123), rng_b(123);
  Tensor da = ops::dropout(x, real(0.3), true, rng_a, nullptr);
  Tensor db = ops::dropout(x, real(0.3), true, rng_b, nullptr);
  for (std::int64_t i = 0; i < da.numel(); ++i) CHECK(da[i] == db[i]);
}

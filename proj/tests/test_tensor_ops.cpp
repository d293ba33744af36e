#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "speckle/errors.hpp"
#include "speckle/ops.hpp"
#include "testutil.hpp"

using namespace speckle;
using testutil::fd_gradient;
using testutil::max_rel_err;
using testutil::rand_tensor;
using testutil::weighted_sum;

namespace {

// Naive triple-loop reference with the documented summation order:
// acc starts at the bias and adds ky -> kx -> ic terms, zero outside bounds.
Tensor naive_conv2d(const Tensor& input, const ConvParams& p) {
  const std::size_t h = input.dim(0), w = input.dim(1), c_in = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), c_out = p.kernel.dim(3);
  const std::size_t oh = conv_output_extent(h, kh, p.stride, p.padding);
  const std::size_t ow = conv_output_extent(w, kw, p.stride, p.padding);
  const std::ptrdiff_t pt = static_cast<std::ptrdiff_t>(pad_before(h, kh, p.stride, p.padding));
  const std::ptrdiff_t pl = static_cast<std::ptrdiff_t>(pad_before(w, kw, p.stride, p.padding));
  Tensor out({oh, ow, c_out});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t oc = 0; oc < c_out; ++oc) {
        double acc = p.bias[oc];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pt;
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pl;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            for (std::size_t ic = 0; ic < c_in; ++ic) {
              acc += input.at3(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ic) *
                     p.kernel[((ky * kw + kx) * c_in + ic) * c_out + oc];
            }
          }
        }
        out.at3(oy, ox, oc) = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("conv2d all-ones valid case") {
  Tensor input = Tensor::full({3, 3, 1}, 1.0);
  ConvParams p{Tensor::full({3, 3, 1, 1}, 1.0), Tensor({1}), 1, Padding::Valid};
  Tensor out = conv2d_forward(input, p);
  CHECK(out.shape() == std::vector<std::size_t>{1, 1, 1});
  CHECK(out[0] == 9.0);
}

TEST_CASE("conv2d 1x1 identity kernel is the identity") {
  std::mt19937_64 rng(7);
  Tensor input = rand_tensor({5, 4, 2}, rng);
  Tensor kernel({1, 1, 2, 2});
  kernel[0 * 2 + 0] = 1.0;  // kernel[0,0,0,0]
  kernel[1 * 2 + 1] = 1.0;  // kernel[0,0,1,1]
  ConvParams p{kernel, Tensor({2}), 1, Padding::Same};
  Tensor out = conv2d_forward(input, p);
  REQUIRE(out.shape() == input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) CHECK(out[i] == input[i]);
}

TEST_CASE("conv2d 512x512 stride-2 shape") {
  Tensor input({512, 512, 1});
  std::mt19937_64 rng(3);
  ConvParams p{rand_tensor({3, 3, 1, 32}, rng), Tensor({32}), 2, Padding::Same};
  Tensor out = conv2d_forward(input, p);
  CHECK(out.shape() == std::vector<std::size_t>{256, 256, 32});
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Tensor input({4, 4, 2});
  ConvParams p{Tensor({3, 3, 3, 8}), Tensor({8}), 1, Padding::Same};
  try {
    conv2d_forward(input, p);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[4, 4, 2]") != std::string::npos);
    CHECK(msg.find("[3, 3, 3, 8]") != std::string::npos);
  }
}

TEST_CASE("conv2d matches the naive reference bit-for-bit") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t h = 1 + rng() % 16, w = 1 + rng() % 16;
    const std::size_t c_in = 1 + rng() % 4, c_out = 1 + rng() % 5;
    const std::size_t k = (rng() % 2) ? 1 : 3;
    const std::size_t stride = 1 + rng() % 2;
    const Padding pad = (rng() % 2 && h >= k && w >= k) ? Padding::Valid : Padding::Same;
    Tensor input = rand_tensor({h, w, c_in}, rng);
    ConvParams p{rand_tensor({k, k, c_in, c_out}, rng), rand_tensor({c_out}, rng), stride, pad};
    Tensor fast = conv2d_forward(input, p);
    Tensor naive = naive_conv2d(input, p);
    REQUIRE(fast.shape() == naive.shape());
    for (std::size_t i = 0; i < fast.size(); ++i) REQUIRE(fast[i] == naive[i]);
  }
}

TEST_CASE("same-padding output extent is ceil(in/stride)") {
  for (std::size_t in = 1; in <= 64; ++in) {
    for (std::size_t stride : {1, 2}) {
      CHECK(conv_output_extent(in, 3, stride, Padding::Same) == (in + stride - 1) / stride);
    }
  }
}

TEST_CASE("conv2d_backward zero grad gives zero gradients") {
  std::mt19937_64 rng(5);
  Tensor input = rand_tensor({5, 5, 2}, rng);
  ConvParams p{rand_tensor({3, 3, 2, 3}, rng), rand_tensor({3}, rng), 1, Padding::Same};
  ConvGrads g = conv2d_backward(input, p, Tensor({5, 5, 3}));
  for (std::size_t i = 0; i < g.input.size(); ++i) CHECK(g.input[i] == 0.0);
  for (std::size_t i = 0; i < g.kernel.size(); ++i) CHECK(g.kernel[i] == 0.0);
  for (std::size_t i = 0; i < g.bias.size(); ++i) CHECK(g.bias[i] == 0.0);
}

TEST_CASE("conv2d_backward scalar chain rule") {
  Tensor input({1, 1, 1}, {3.0});
  ConvParams p{Tensor({1, 1, 1, 1}, {5.0}), Tensor({1}), 1, Padding::Valid};
  Tensor grad_out({1, 1, 1}, {2.0});
  ConvGrads g = conv2d_backward(input, p, grad_out);
  CHECK(g.kernel[0] == 3.0 * 2.0);
  CHECK(g.input[0] == 5.0 * 2.0);
  CHECK(g.bias[0] == 2.0);
}

TEST_CASE("conv2d_backward rejects mismatched grad shape") {
  Tensor input({5, 5, 2});
  ConvParams p{Tensor({3, 3, 2, 3}), Tensor({3}), 1, Padding::Same};
  CHECK_THROWS_AS(conv2d_backward(input, p, Tensor({4, 5, 3})), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t stride = 1 + trial % 2;
    const Padding pad = trial < 2 ? Padding::Same : Padding::Valid;
    Tensor input = rand_tensor({5, 5, 2}, rng);
    ConvParams p{rand_tensor({3, 3, 2, 3}, rng), rand_tensor({3}, rng), stride, pad};
    Tensor probe = rand_tensor(conv2d_forward(input, p).shape(), rng);
    ConvGrads analytic = conv2d_backward(input, p, probe);

    auto eval_in = [&]() { return weighted_sum(conv2d_forward(input, p), probe); };
    CHECK(max_rel_err(analytic.input, fd_gradient(input, eval_in)) < 1e-4);
    auto eval_k = [&]() { return weighted_sum(conv2d_forward(input, p), probe); };
    CHECK(max_rel_err(analytic.kernel, fd_gradient(p.kernel, eval_k)) < 1e-4);
    CHECK(max_rel_err(analytic.bias, fd_gradient(p.bias, eval_k)) < 1e-4);
  }
}

TEST_CASE("depthwise per-channel sums under valid padding") {
  Tensor input({3, 3, 2});
  for (std::size_t i = 0; i < 9; ++i) {
    input[i * 2 + 0] = static_cast<double>(i);
    input[i * 2 + 1] = 100.0 + static_cast<double>(i);
  }
  DepthwiseParams p{Tensor::full({3, 3, 2}, 1.0), Tensor({2}), 1, Padding::Valid};
  Tensor out = depthwise_forward(input, p);
  REQUIRE(out.shape() == std::vector<std::size_t>{1, 1, 2});
  CHECK(out[0] == 36.0);
  CHECK(out[1] == 936.0);
}

TEST_CASE("depthwise center-tap kernel is the identity") {
  std::mt19937_64 rng(23);
  Tensor input = rand_tensor({6, 5, 3}, rng);
  Tensor kernel({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) kernel[(1 * 3 + 1) * 3 + c] = 1.0;
  DepthwiseParams p{kernel, Tensor({3}), 1, Padding::Same};
  Tensor out = depthwise_forward(input, p);
  for (std::size_t i = 0; i < input.size(); ++i) CHECK(out[i] == input[i]);
}

TEST_CASE("depthwise keeps 256x256x32 shape at stride 1") {
  std::mt19937_64 rng(2);
  Tensor input({256, 256, 32});
  DepthwiseParams p{rand_tensor({3, 3, 32}, rng), Tensor({32}), 1, Padding::Same};
  CHECK(depthwise_forward(input, p).shape() == std::vector<std::size_t>{256, 256, 32});
}

TEST_CASE("depthwise channels never mix") {
  std::mt19937_64 rng(29);
  Tensor input = rand_tensor({7, 7, 4}, rng);
  DepthwiseParams p{rand_tensor({3, 3, 4}, rng), rand_tensor({4}, rng), 1, Padding::Same};
  Tensor base = depthwise_forward(input, p);
  for (std::size_t j = 0; j < 4; ++j) {
    Tensor poked = input;
    poked.at3(3, 3, j) += 1.0;
    Tensor out = depthwise_forward(poked, p);
    for (std::size_t y = 0; y < 7; ++y) {
      for (std::size_t x = 0; x < 7; ++x) {
        for (std::size_t c = 0; c < 4; ++c) {
          if (c != j) CHECK(out.at3(y, x, c) == base.at3(y, x, c));
        }
      }
    }
  }
}

TEST_CASE("depthwise rejects channel mismatch") {
  Tensor input({4, 4, 2});
  DepthwiseParams p{Tensor({3, 3, 3}), Tensor({3}), 1, Padding::Same};
  CHECK_THROWS_AS(depthwise_forward(input, p), std::invalid_argument);
}

TEST_CASE("depthwise backward: zero grad, scalar case, finite differences") {
  std::mt19937_64 rng(31);
  Tensor input = rand_tensor({6, 6, 3}, rng);
  DepthwiseParams p{rand_tensor({3, 3, 3}, rng), rand_tensor({3}, rng), 1, Padding::Same};

  ConvGrads zero = depthwise_backward(input, p, Tensor({6, 6, 3}));
  for (std::size_t i = 0; i < zero.kernel.size(); ++i) CHECK(zero.kernel[i] == 0.0);

  Tensor sin({1, 1, 2}, {3.0, -4.0});
  DepthwiseParams sp{Tensor({1, 1, 2}, {5.0, 7.0}), Tensor({2}), 1, Padding::Valid};
  ConvGrads sg = depthwise_backward(sin, sp, Tensor({1, 1, 2}, {2.0, 10.0}));
  CHECK(sg.kernel[0] == 6.0);
  CHECK(sg.kernel[1] == -40.0);
  CHECK(sg.input[0] == 10.0);
  CHECK(sg.input[1] == 70.0);

  Tensor probe = rand_tensor(depthwise_forward(input, p).shape(), rng);
  ConvGrads analytic = depthwise_backward(input, p, probe);
  auto eval = [&]() { return weighted_sum(depthwise_forward(input, p), probe); };
  CHECK(max_rel_err(analytic.input, fd_gradient(input, eval)) < 1e-4);
  CHECK(max_rel_err(analytic.kernel, fd_gradient(p.kernel, eval)) < 1e-4);
  CHECK(max_rel_err(analytic.bias, fd_gradient(p.bias, eval)) < 1e-4);
}

TEST_CASE("relu forward and backward") {
  Tensor x({3}, {-1.0, 0.0, 2.0});
  Tensor y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tensor pos({4}, {0.5, 1.0, 2.0, 3.0});
  Tensor ident = relu(pos);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ident[i] == pos[i]);

  Tensor back = relu_backward(Tensor({2}, {-1.0, 2.0}), Tensor({2}, {5.0, 5.0}));
  CHECK(back[0] == 0.0);
  CHECK(back[1] == 5.0);
}

TEST_CASE("global average pooling") {
  Tensor constant = Tensor::full({4, 6, 3}, 2.5);
  Tensor pooled = global_avg_pool(constant);
  REQUIRE(pooled.shape() == std::vector<std::size_t>{3});
  for (std::size_t c = 0; c < 3; ++c) CHECK(pooled[c] == doctest::Approx(2.5).epsilon(1e-12));

  Tensor quad({2, 2, 1}, {1.0, 2.0, 3.0, 4.0});
  CHECK(global_avg_pool(quad)[0] == 2.5);

  Tensor back = gap_backward(2, 2, Tensor({1}, {8.0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == 2.0);
}

TEST_CASE("dense forward examples") {
  Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor input({2}, {1.0, 2.0});
  Tensor out = dense_forward(input, DenseParams{eye, Tensor({2})});
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);

  Tensor biased = dense_forward(input, DenseParams{eye, Tensor({2}, {10.0, 20.0})});
  CHECK(biased[0] == 11.0);
  CHECK(biased[1] == 22.0);

  CHECK_THROWS_AS(dense_forward(Tensor({3}), DenseParams{eye, Tensor({2})}), std::invalid_argument);
}

TEST_CASE("dense gradients match finite differences") {
  std::mt19937_64 rng(37);
  Tensor input = rand_tensor({8}, rng);
  DenseParams p{rand_tensor({8, 4}, rng), rand_tensor({4}, rng)};
  Tensor probe = rand_tensor({4}, rng);
  DenseGrads analytic = dense_backward(input, p, probe);
  auto eval = [&]() { return weighted_sum(dense_forward(input, p), probe); };
  CHECK(max_rel_err(analytic.input, fd_gradient(input, eval)) < 1e-4);
  CHECK(max_rel_err(analytic.weights, fd_gradient(p.weights, eval)) < 1e-4);
  CHECK(max_rel_err(analytic.bias, fd_gradient(p.bias, eval)) < 1e-4);
}

TEST_CASE("softmax examples and invariants") {
  Tensor uniform = softmax(Tensor({59}));
  for (std::size_t i = 0; i < 59; ++i) CHECK(uniform[i] == doctest::Approx(1.0 / 59.0).epsilon(1e-12));

  Tensor two = softmax(Tensor({2}, {std::log(1.0), std::log(3.0)}));
  CHECK(two[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(0.75).epsilon(1e-12));

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = rand_tensor({1 + rng() % 60}, rng, -30.0, 30.0);
    Tensor probs = softmax(logits);
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      CHECK(probs[i] > 0.0);
      sum += probs[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);

    Tensor shifted = logits;
    const double c = trial % 2 ? 10.0 : -100.0;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += c;
    Tensor probs2 = softmax(shifted);
    for (std::size_t i = 0; i < probs.size(); ++i) CHECK(std::abs(probs[i] - probs2[i]) < 1e-12);
  }

  CHECK_THROWS_AS(softmax(Tensor({2}, {1.0, std::nan("")})), NumericError);
  CHECK_THROWS_AS(softmax(Tensor({2}, {1.0, INFINITY})), NumericError);
}

TEST_CASE("cross entropy examples") {
  Tensor perfect({3}, {0.0, 1.0, 0.0});
  CHECK(cross_entropy(perfect, 1) == 0.0);

  Tensor uniform = Tensor::full({59}, 1.0 / 59.0);
  CHECK(cross_entropy(uniform, 7) == doctest::Approx(std::log(59.0)).epsilon(1e-12));

  Tensor half = Tensor::full({2}, 0.5);
  Tensor fused = softmax_cross_entropy_grad(half, 0);
  CHECK(fused[0] == -0.5);
  CHECK(fused[1] == 0.5);

  CHECK_THROWS_AS(cross_entropy(uniform, 59), std::invalid_argument);
  CHECK_THROWS_AS(softmax_cross_entropy_grad(half, 2), std::invalid_argument);
}

TEST_CASE("softmax_backward agrees with finite differences") {
  std::mt19937_64 rng(43);
  Tensor logits = rand_tensor({6}, rng);
  Tensor probe = rand_tensor({6}, rng);
  Tensor probs = softmax(logits);
  Tensor analytic = softmax_backward(probs, probe);
  auto eval = [&]() { return weighted_sum(softmax(logits), probe); };
  CHECK(max_rel_err(analytic, fd_gradient(logits, eval)) < 1e-4);
}

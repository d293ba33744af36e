#pragma once

#include <cstddef>

#include "speckle/tensor.hpp"

namespace speckle {

enum class Padding { Same, Valid };

/// Standard convolution parameters. Kernel layout [kh, kw, c_in, c_out].
struct ConvParams {
  Tensor kernel;
  Tensor bias;  // [c_out]
  std::size_t stride = 1;
  Padding padding = Padding::Same;
};

/// Depthwise convolution parameters. Kernel layout [kh, kw, c]; channels never mix.
struct DepthwiseParams {
  Tensor kernel;
  Tensor bias;  // [c]
  std::size_t stride = 1;
  Padding padding = Padding::Same;
};

/// Fully connected parameters. Weights layout [n_in, n_out].
struct DenseParams {
  Tensor weights;
  Tensor bias;  // [n_out]
};

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// Spatial output extent: Same -> ceil(in/stride), Valid -> floor((in-k)/stride)+1.
std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding);

/// Leading zero-pad under Same padding (total pad split low/high, extra pixel on the high side).
std::size_t pad_before(std::size_t in, std::size_t k, std::size_t stride, Padding padding);

// Per output element the accumulator starts at the bias and adds kernel*input
// terms in ky -> kx -> c_in order; results are reproducible bit-for-bit against
// a naive triple loop using the same order.
Tensor conv2d_forward(const Tensor& input, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

Tensor depthwise_forward(const Tensor& input, const DepthwiseParams& p);
ConvGrads depthwise_backward(const Tensor& input, const DepthwiseParams& p, const Tensor& grad_out);

Tensor relu(const Tensor& input);
/// Gradient at exactly 0 is defined as 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& input);
Tensor gap_backward(std::size_t h, std::size_t w, const Tensor& grad_out);

Tensor dense_forward(const Tensor& input, const DenseParams& p);
DenseGrads dense_backward(const Tensor& input, const DenseParams& p, const Tensor& grad_out);

/// Max-subtracted softmax; rejects non-finite logits.
Tensor softmax(const Tensor& logits);
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_out);

/// -ln(probs[label]) with a 1e-12 probability floor.
double cross_entropy(const Tensor& probs, std::size_t label);
/// Fused softmax + cross-entropy gradient with respect to the logits: probs - one_hot(label).
Tensor softmax_cross_entropy_grad(const Tensor& probs, std::size_t label);

}  // namespace speckle

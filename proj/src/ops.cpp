#include "speckle/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "speckle/errors.hpp"

namespace speckle {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + " must have rank " + std::to_string(rank) +
                                ", got shape " + shape_to_string(t.shape()));
  }
}

std::size_t checked_stride(std::size_t stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  return stride;
}

void require_valid_fits(std::size_t in_h, std::size_t in_w, std::size_t kh, std::size_t kw, Padding padding) {
  if (padding == Padding::Valid && (in_h < kh || in_w < kw)) {
    throw std::invalid_argument("Valid padding needs input >= kernel, got input " +
                                shape_to_string({in_h, in_w}) + " vs kernel " + shape_to_string({kh, kw}));
  }
}

struct SpatialPlan {
  std::size_t out_h, out_w;
  std::ptrdiff_t pad_top, pad_left;
};

SpatialPlan plan_spatial(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                         std::size_t stride, Padding padding) {
  SpatialPlan s;
  s.out_h = conv_output_extent(h, kh, stride, padding);
  s.out_w = conv_output_extent(w, kw, stride, padding);
  s.pad_top = static_cast<std::ptrdiff_t>(pad_before(h, kh, stride, padding));
  s.pad_left = static_cast<std::ptrdiff_t>(pad_before(w, kw, stride, padding));
  return s;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (padding == Padding::Same) return (in + stride - 1) / stride;
  if (in < k) {
    throw std::invalid_argument("Valid padding needs input extent >= kernel, got " +
                                std::to_string(in) + " < " + std::to_string(k));
  }
  return (in - k) / stride + 1;
}

std::size_t pad_before(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (padding == Padding::Valid) return 0;
  std::size_t out = (in + stride - 1) / stride;
  std::size_t covered = (out - 1) * stride + k;
  std::size_t total = covered > in ? covered - in : 0;
  return total / 2;
}

Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  require_rank(input, 3, "conv2d input");
  require_rank(p.kernel, 4, "conv2d kernel");
  require_rank(p.bias, 1, "conv2d bias");
  checked_stride(p.stride);
  const std::size_t h = input.dim(0), w = input.dim(1), c_in = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1);
  const std::size_t kc_in = p.kernel.dim(2), c_out = p.kernel.dim(3);
  if (c_in != kc_in) {
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_to_string(input.shape()) +
                                " vs kernel " + shape_to_string(p.kernel.shape()));
  }
  if (p.bias.size() != c_out) {
    throw std::invalid_argument("conv2d bias length " + std::to_string(p.bias.size()) +
                                " does not match kernel " + shape_to_string(p.kernel.shape()));
  }
  require_valid_fits(h, w, kh, kw, p.padding);

  const SpatialPlan s = plan_spatial(h, w, kh, kw, p.stride, p.padding);
  Tensor out({s.out_h, s.out_w, c_out});
  const double* in = input.data();
  const double* kernel = p.kernel.data();
  const double* bias = p.bias.data();
  double* o = out.data();

  for (std::size_t oy = 0; oy < s.out_h; ++oy) {
    const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * p.stride) - s.pad_top;
    const std::ptrdiff_t ky_lo = std::max<std::ptrdiff_t>(0, -iy0);
    const std::ptrdiff_t ky_hi = std::min<std::ptrdiff_t>(kh, static_cast<std::ptrdiff_t>(h) - iy0);
    for (std::size_t ox = 0; ox < s.out_w; ++ox) {
      const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * p.stride) - s.pad_left;
      const std::ptrdiff_t kx_lo = std::max<std::ptrdiff_t>(0, -ix0);
      const std::ptrdiff_t kx_hi = std::min<std::ptrdiff_t>(kw, static_cast<std::ptrdiff_t>(w) - ix0);
      double* orow = o + (oy * s.out_w + ox) * c_out;
      for (std::size_t oc = 0; oc < c_out; ++oc) orow[oc] = bias[oc];
      for (std::ptrdiff_t ky = ky_lo; ky < ky_hi; ++ky) {
        const std::size_t iy = static_cast<std::size_t>(iy0 + ky);
        for (std::ptrdiff_t kx = kx_lo; kx < kx_hi; ++kx) {
          const std::size_t ix = static_cast<std::size_t>(ix0 + kx);
          const double* irow = in + (iy * w + ix) * c_in;
          const double* krow = kernel + ((ky * kw + kx) * c_in) * c_out;
          for (std::size_t ic = 0; ic < c_in; ++ic) {
            const double a = irow[ic];
            const double* kvec = krow + ic * c_out;
            for (std::size_t oc = 0; oc < c_out; ++oc) orow[oc] += a * kvec[oc];
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out) {
  require_rank(grad_out, 3, "conv2d grad_out");
  const std::size_t h = input.dim(0), w = input.dim(1), c_in = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1), c_out = p.kernel.dim(3);
  const SpatialPlan s = plan_spatial(h, w, kh, kw, p.stride, p.padding);
  if (grad_out.shape() != std::vector<std::size_t>{s.out_h, s.out_w, c_out}) {
    throw std::invalid_argument("conv2d grad_out shape " + shape_to_string(grad_out.shape()) +
                                " does not match forward output " +
                                shape_to_string({s.out_h, s.out_w, c_out}));
  }
  if (input.dim(2) != p.kernel.dim(2)) {
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_to_string(input.shape()) +
                                " vs kernel " + shape_to_string(p.kernel.shape()));
  }

  ConvGrads g{Tensor(input.shape()), Tensor(p.kernel.shape()), Tensor(p.bias.shape())};
  const double* in = input.data();
  const double* kernel = p.kernel.data();
  const double* go = grad_out.data();
  double* gin = g.input.data();
  double* gk = g.kernel.data();
  double* gb = g.bias.data();

  for (std::size_t oy = 0; oy < s.out_h; ++oy) {
    const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * p.stride) - s.pad_top;
    for (std::size_t ox = 0; ox < s.out_w; ++ox) {
      const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * p.stride) - s.pad_left;
      const double* grow = go + (oy * s.out_w + ox) * c_out;
      for (std::size_t oc = 0; oc < c_out; ++oc) gb[oc] += grow[oc];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t in_base = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c_in;
          for (std::size_t ic = 0; ic < c_in; ++ic) {
            const double a = in[in_base + ic];
            const std::size_t k_base = ((ky * kw + kx) * c_in + ic) * c_out;
            double dot = 0.0;
            for (std::size_t oc = 0; oc < c_out; ++oc) {
              gk[k_base + oc] += a * grow[oc];
              dot += kernel[k_base + oc] * grow[oc];
            }
            gin[in_base + ic] += dot;
          }
        }
      }
    }
  }
  return g;
}

Tensor depthwise_forward(const Tensor& input, const DepthwiseParams& p) {
  require_rank(input, 3, "depthwise input");
  require_rank(p.kernel, 3, "depthwise kernel");
  checked_stride(p.stride);
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1);
  if (p.kernel.dim(2) != c) {
    throw std::invalid_argument("depthwise channel mismatch: input " + shape_to_string(input.shape()) +
                                " vs kernel " + shape_to_string(p.kernel.shape()));
  }
  if (p.bias.size() != c) {
    throw std::invalid_argument("depthwise bias length " + std::to_string(p.bias.size()) +
                                " does not match channels " + std::to_string(c));
  }
  require_valid_fits(h, w, kh, kw, p.padding);

  const SpatialPlan s = plan_spatial(h, w, kh, kw, p.stride, p.padding);
  Tensor out({s.out_h, s.out_w, c});
  const double* in = input.data();
  const double* kernel = p.kernel.data();
  const double* bias = p.bias.data();
  double* o = out.data();

  for (std::size_t oy = 0; oy < s.out_h; ++oy) {
    const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * p.stride) - s.pad_top;
    for (std::size_t ox = 0; ox < s.out_w; ++ox) {
      const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * p.stride) - s.pad_left;
      double* orow = o + (oy * s.out_w + ox) * c;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] = bias[ch];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* irow = in + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          const double* krow = kernel + (ky * kw + kx) * c;
          for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += irow[ch] * krow[ch];
        }
      }
    }
  }
  return out;
}

ConvGrads depthwise_backward(const Tensor& input, const DepthwiseParams& p, const Tensor& grad_out) {
  require_rank(grad_out, 3, "depthwise grad_out");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const std::size_t kh = p.kernel.dim(0), kw = p.kernel.dim(1);
  const SpatialPlan s = plan_spatial(h, w, kh, kw, p.stride, p.padding);
  if (grad_out.shape() != std::vector<std::size_t>{s.out_h, s.out_w, c}) {
    throw std::invalid_argument("depthwise grad_out shape " + shape_to_string(grad_out.shape()) +
                                " does not match forward output " + shape_to_string({s.out_h, s.out_w, c}));
  }

  ConvGrads g{Tensor(input.shape()), Tensor(p.kernel.shape()), Tensor(p.bias.shape())};
  const double* in = input.data();
  const double* kernel = p.kernel.data();
  const double* go = grad_out.data();
  double* gin = g.input.data();
  double* gk = g.kernel.data();
  double* gb = g.bias.data();

  for (std::size_t oy = 0; oy < s.out_h; ++oy) {
    const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy * p.stride) - s.pad_top;
    for (std::size_t ox = 0; ox < s.out_w; ++ox) {
      const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox * p.stride) - s.pad_left;
      const double* grow = go + (oy * s.out_w + ox) * c;
      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += grow[ch];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t in_base = (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          const std::size_t k_base = (ky * kw + kx) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            gk[k_base + ch] += in[in_base + ch] * grow[ch];
            gin[in_base + ch] += kernel[k_base + ch] * grow[ch];
          }
        }
      }
    }
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  const double* in = input.data();
  double* o = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor out(input.shape());
  const double* in = input.data();
  const double* go = grad_out.data();
  double* o = out.data();
  for (std::size_t i = 0; i < input.size(); ++i) o[i] = in[i] > 0.0 ? go[i] : 0.0;
  return out;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 3, "global_avg_pool input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  Tensor out({c});
  const double* in = input.data();
  double* o = out.data();
  for (std::size_t p = 0; p < h * w; ++p) {
    const double* row = in + p * c;
    for (std::size_t ch = 0; ch < c; ++ch) o[ch] += row[ch];
  }
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) o[ch] *= inv;
  return out;
}

Tensor gap_backward(std::size_t h, std::size_t w, const Tensor& grad_out) {
  require_rank(grad_out, 1, "gap_backward grad_out");
  if (h == 0 || w == 0) throw std::invalid_argument("gap_backward needs h, w >= 1");
  const std::size_t c = grad_out.dim(0);
  Tensor out({h, w, c});
  const double inv = 1.0 / static_cast<double>(h * w);
  double* o = out.data();
  const double* go = grad_out.data();
  for (std::size_t p = 0; p < h * w; ++p) {
    double* row = o + p * c;
    for (std::size_t ch = 0; ch < c; ++ch) row[ch] = go[ch] * inv;
  }
  return out;
}

Tensor dense_forward(const Tensor& input, const DenseParams& p) {
  require_rank(input, 1, "dense input");
  require_rank(p.weights, 2, "dense weights");
  const std::size_t n_in = p.weights.dim(0), n_out = p.weights.dim(1);
  if (input.dim(0) != n_in) {
    throw std::invalid_argument("dense input length " + shape_to_string(input.shape()) +
                                " does not match weights " + shape_to_string(p.weights.shape()));
  }
  if (p.bias.size() != n_out) {
    throw std::invalid_argument("dense bias length " + std::to_string(p.bias.size()) +
                                " does not match weights " + shape_to_string(p.weights.shape()));
  }
  Tensor out({n_out});
  const double* in = input.data();
  const double* wgt = p.weights.data();
  double* o = out.data();
  for (std::size_t j = 0; j < n_out; ++j) o[j] = p.bias[j];
  for (std::size_t i = 0; i < n_in; ++i) {
    const double a = in[i];
    const double* wrow = wgt + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) o[j] += a * wrow[j];
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const DenseParams& p, const Tensor& grad_out) {
  const std::size_t n_in = p.weights.dim(0), n_out = p.weights.dim(1);
  if (grad_out.rank() != 1 || grad_out.dim(0) != n_out) {
    throw std::invalid_argument("dense grad_out shape " + shape_to_string(grad_out.shape()) +
                                " does not match output length " + std::to_string(n_out));
  }
  if (input.rank() != 1 || input.dim(0) != n_in) {
    throw std::invalid_argument("dense input shape " + shape_to_string(input.shape()) +
                                " does not match weights " + shape_to_string(p.weights.shape()));
  }
  DenseGrads g{Tensor({n_in}), Tensor(p.weights.shape()), Tensor({n_out})};
  const double* in = input.data();
  const double* wgt = p.weights.data();
  const double* go = grad_out.data();
  for (std::size_t j = 0; j < n_out; ++j) g.bias[j] = go[j];
  double* gw = g.weights.data();
  for (std::size_t i = 0; i < n_in; ++i) {
    const double a = in[i];
    const double* wrow = wgt + i * n_out;
    double* gwrow = gw + i * n_out;
    double dot = 0.0;
    for (std::size_t j = 0; j < n_out; ++j) {
      gwrow[j] = a * go[j];
      dot += wrow[j] * go[j];
    }
    g.input[i] = dot;
  }
  return g;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax logits");
  const std::size_t k = logits.dim(0);
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isfinite(logits[i])) {
      throw NumericError("softmax rejects non-finite logit at index " + std::to_string(i));
    }
  }
  double max_logit = logits[0];
  for (std::size_t i = 1; i < k; ++i) max_logit = std::max(max_logit, logits[i]);
  Tensor out({k});
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (std::size_t i = 0; i < k; ++i) out[i] /= sum;
  return out;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_out) {
  require_same_shape(probs, grad_out, "softmax_backward");
  const std::size_t k = probs.dim(0);
  double dot = 0.0;
  for (std::size_t i = 0; i < k; ++i) dot += probs[i] * grad_out[i];
  Tensor out({k});
  for (std::size_t i = 0; i < k; ++i) out[i] = probs[i] * (grad_out[i] - dot);
  return out;
}

double cross_entropy(const Tensor& probs, std::size_t label) {
  require_rank(probs, 1, "cross_entropy probs");
  if (label >= probs.dim(0)) {
    throw std::invalid_argument("cross_entropy label " + std::to_string(label) +
                                " out of range for " + std::to_string(probs.dim(0)) + " classes");
  }
  return -std::log(std::max(probs[label], 1e-12));
}

Tensor softmax_cross_entropy_grad(const Tensor& probs, std::size_t label) {
  require_rank(probs, 1, "softmax_cross_entropy_grad probs");
  if (label >= probs.dim(0)) {
    throw std::invalid_argument("cross_entropy label " + std::to_string(label) +
                                " out of range for " + std::to_string(probs.dim(0)) + " classes");
  }
  Tensor g({probs.dim(0)});
  for (std::size_t i = 0; i < probs.dim(0); ++i) g[i] = probs[i];
  g[label] -= 1.0;
  return g;
}

}  // namespace speckle

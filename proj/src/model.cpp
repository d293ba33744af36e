#include "speckle/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace speckle {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Depthwise: return "depthwise";
    case LayerKind::Pointwise: return "pointwise";
    case LayerKind::ReLU: return "relu";
    case LayerKind::GAP: return "gap";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

ModelSpec canonical_spec() {
  ModelSpec spec;
  spec.input_channels = 1;
  spec.num_classes = 59;
  auto conv = [](std::size_t filters, std::size_t k, std::size_t stride) {
    return LayerSpec{LayerKind::Conv, filters, k, stride, Padding::Same};
  };
  auto pointwise = [](std::size_t filters, std::size_t stride) {
    return LayerSpec{LayerKind::Pointwise, filters, 1, stride, Padding::Same};
  };
  auto dense = [](std::size_t width) { return LayerSpec{LayerKind::Dense, width, 0, 1, Padding::Same}; };
  const LayerSpec relu_layer{LayerKind::ReLU, 0, 0, 1, Padding::Same};

  spec.layers = {
      conv(32, 3, 2),
      relu_layer,
      LayerSpec{LayerKind::Depthwise, 0, 3, 1, Padding::Same},
      relu_layer,
      pointwise(128, 1),
      relu_layer,
      pointwise(256, 2),
      relu_layer,
      LayerSpec{LayerKind::GAP, 0, 0, 1, Padding::Same},
      dense(512),
      relu_layer,
      dense(256),
      relu_layer,
      dense(128),
      relu_layer,
      dense(59),
      LayerSpec{LayerKind::Softmax, 0, 0, 1, Padding::Same},
  };
  return spec;
}

void validate_spec(const ModelSpec& spec) {
  if (spec.input_channels < 1) throw std::invalid_argument("model spec needs input_channels >= 1");
  bool spatial = true;
  std::size_t last_width = 0;
  bool has_params = false;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Pointwise:
        if (!spatial) throw std::invalid_argument("layer " + std::to_string(i) + ": convolution after GAP");
        if (l.width == 0) throw std::invalid_argument("layer " + std::to_string(i) + ": filter count must be >= 1");
        if (l.kind == LayerKind::Pointwise && l.kernel_size != 1) {
          throw std::invalid_argument("layer " + std::to_string(i) + ": pointwise kernel must be 1x1");
        }
        if (l.kind == LayerKind::Conv && l.kernel_size % 2 == 0) {
          throw std::invalid_argument("layer " + std::to_string(i) + ": conv kernel size must be odd");
        }
        if (l.stride < 1) throw std::invalid_argument("layer " + std::to_string(i) + ": stride must be >= 1");
        has_params = true;
        last_width = l.width;
        break;
      case LayerKind::Depthwise:
        if (!spatial) throw std::invalid_argument("layer " + std::to_string(i) + ": depthwise after GAP");
        if (l.kernel_size % 2 == 0) {
          throw std::invalid_argument("layer " + std::to_string(i) + ": depthwise kernel size must be odd");
        }
        if (l.stride < 1) throw std::invalid_argument("layer " + std::to_string(i) + ": stride must be >= 1");
        has_params = true;
        break;
      case LayerKind::GAP:
        if (!spatial) throw std::invalid_argument("layer " + std::to_string(i) + ": repeated GAP");
        spatial = false;
        break;
      case LayerKind::Dense:
        if (spatial) throw std::invalid_argument("layer " + std::to_string(i) + ": dense before GAP");
        if (l.width == 0) throw std::invalid_argument("layer " + std::to_string(i) + ": dense width must be >= 1");
        has_params = true;
        last_width = l.width;
        break;
      case LayerKind::ReLU:
        break;
      case LayerKind::Softmax:
        if (spatial) throw std::invalid_argument("layer " + std::to_string(i) + ": softmax before GAP");
        if (i + 1 != spec.layers.size()) {
          throw std::invalid_argument("layer " + std::to_string(i) + ": softmax must be the final layer");
        }
        break;
    }
  }
  if (has_params && spec.num_classes != last_width) {
    throw std::invalid_argument("final layer width " + std::to_string(last_width) +
                                " does not match num_classes " + std::to_string(spec.num_classes));
  }
}

std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> parameter_shapes(
    const ModelSpec& spec) {
  validate_spec(spec);
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> shapes;
  std::size_t channels = spec.input_channels;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Pointwise:
        shapes.push_back({{l.kernel_size, l.kernel_size, channels, l.width}, {l.width}});
        channels = l.width;
        break;
      case LayerKind::Depthwise:
        shapes.push_back({{l.kernel_size, l.kernel_size, channels}, {channels}});
        break;
      case LayerKind::Dense:
        shapes.push_back({{channels, l.width}, {l.width}});
        channels = l.width;
        break;
      default:
        break;
    }
  }
  return shapes;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& [kernel, bias] : parameter_shapes(spec)) {
    total += shape_product(kernel) + shape_product(bias);
  }
  return total;
}

std::vector<std::vector<std::size_t>> layer_output_shapes(const ModelSpec& spec, std::size_t h,
                                                          std::size_t w) {
  validate_spec(spec);
  std::vector<std::vector<std::size_t>> shapes;
  std::size_t channels = spec.input_channels;
  bool spatial = true;
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Pointwise:
        h = conv_output_extent(h, l.kernel_size, l.stride, l.padding);
        w = conv_output_extent(w, l.kernel_size, l.stride, l.padding);
        channels = l.width;
        break;
      case LayerKind::Depthwise:
        h = conv_output_extent(h, l.kernel_size, l.stride, l.padding);
        w = conv_output_extent(w, l.kernel_size, l.stride, l.padding);
        break;
      case LayerKind::GAP:
        spatial = false;
        break;
      case LayerKind::Dense:
        channels = l.width;
        break;
      case LayerKind::ReLU:
      case LayerKind::Softmax:
        break;
    }
    if (spatial) {
      shapes.push_back({h, w, channels});
    } else {
      shapes.push_back({channels});
    }
  }
  return shapes;
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  Model model;
  model.spec = spec;
  std::mt19937_64 rng(seed);
  auto next_unit = [&rng]() {
    // 53-bit uniform in [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  };
  std::size_t layer_index = 0;
  auto shapes = parameter_shapes(spec);
  std::size_t param_slot = 0;
  for (const LayerSpec& l : spec.layers) {
    if (l.has_params()) {
      const auto& [kshape, bshape] = shapes[param_slot++];
      std::size_t fan_in = 0;
      switch (l.kind) {
        case LayerKind::Conv:
        case LayerKind::Pointwise:
          fan_in = kshape[0] * kshape[1] * kshape[2];
          break;
        case LayerKind::Depthwise:
          fan_in = kshape[0] * kshape[1];
          break;
        case LayerKind::Dense:
          fan_in = kshape[0];
          break;
        default:
          break;
      }
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      Tensor kernel(kshape);
      for (std::size_t i = 0; i < kernel.size(); ++i) {
        kernel[i] = snap_to_f32((2.0 * next_unit() - 1.0) * bound);
      }
      model.params.push_back({layer_index, std::move(kernel), Tensor(bshape)});
    }
    ++layer_index;
  }
  return model;
}

namespace {

ConvParams conv_params_view(const LayerParams& p, const LayerSpec& l) {
  return ConvParams{p.kernel, p.bias, l.stride, l.padding};
}

void check_image(const Model& model, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != model.spec.input_channels) {
    throw std::invalid_argument("model input must be [h, w, " +
                                std::to_string(model.spec.input_channels) + "], got " +
                                shape_to_string(image.shape()));
  }
  if (image.dim(0) < 4 || image.dim(1) < 4) {
    throw std::invalid_argument("model input must be at least 4x4, got " +
                                shape_to_string(image.shape()));
  }
}

}  // namespace

ForwardTrace forward_trace(const Model& model, const Tensor& image) {
  check_image(model, image);
  ForwardTrace trace;
  trace.activations.reserve(model.spec.layers.size() + 1);
  trace.activations.push_back(image);
  std::size_t param_slot = 0;
  for (const LayerSpec& l : model.spec.layers) {
    const Tensor& x = trace.activations.back();
    Tensor y;
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Pointwise:
        y = conv2d_forward(x, conv_params_view(model.params[param_slot], l));
        ++param_slot;
        break;
      case LayerKind::Depthwise: {
        const LayerParams& p = model.params[param_slot++];
        y = depthwise_forward(x, DepthwiseParams{p.kernel, p.bias, l.stride, l.padding});
        break;
      }
      case LayerKind::ReLU:
        y = relu(x);
        break;
      case LayerKind::GAP:
        y = global_avg_pool(x);
        break;
      case LayerKind::Dense: {
        const LayerParams& p = model.params[param_slot++];
        y = dense_forward(x, DenseParams{p.kernel, p.bias});
        break;
      }
      case LayerKind::Softmax:
        y = softmax(x);
        break;
    }
    trace.activations.push_back(std::move(y));
  }
  return trace;
}

Tensor forward(const Model& model, const Tensor& image) {
  return forward_trace(model, image).activations.back();
}

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
                   Tensor* grad_input) {
  const auto& layers = model.spec.layers;
  if (trace.activations.size() != layers.size() + 1) {
    throw std::invalid_argument("forward trace does not match model spec");
  }
  Gradients grads;
  grads.kernel.resize(model.params.size());
  grads.bias.resize(model.params.size());

  // grad_logits applies below the trailing softmax when present.
  std::size_t top = layers.size();
  if (!layers.empty() && layers.back().kind == LayerKind::Softmax) --top;

  Tensor grad = grad_logits;
  std::size_t param_slot = model.params.size();
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].has_params()) --param_slot;
    if (i >= top) continue;
    const LayerSpec& l = layers[i];
    const Tensor& x = trace.activations[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Pointwise: {
        ConvGrads g = conv2d_backward(x, conv_params_view(model.params[param_slot], l), grad);
        grads.kernel[param_slot] = std::move(g.kernel);
        grads.bias[param_slot] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::Depthwise: {
        const LayerParams& p = model.params[param_slot];
        ConvGrads g = depthwise_backward(x, DepthwiseParams{p.kernel, p.bias, l.stride, l.padding}, grad);
        grads.kernel[param_slot] = std::move(g.kernel);
        grads.bias[param_slot] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::ReLU:
        grad = relu_backward(x, grad);
        break;
      case LayerKind::GAP:
        grad = gap_backward(x.dim(0), x.dim(1), grad);
        break;
      case LayerKind::Dense: {
        const LayerParams& p = model.params[param_slot];
        DenseGrads g = dense_backward(x, DenseParams{p.kernel, p.bias}, grad);
        grads.kernel[param_slot] = std::move(g.weights);
        grads.bias[param_slot] = std::move(g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::Softmax:
        grad = softmax_backward(trace.activations[i + 1], grad);
        break;
    }
  }
  if (grad_input) *grad_input = std::move(grad);
  return grads;
}

Gradients backward_cross_entropy(const Model& model, const ForwardTrace& trace, std::size_t label,
                                 Tensor* grad_input) {
  const Tensor& probs = trace.activations.back();
  return backward(model, trace, softmax_cross_entropy_grad(probs, label), grad_input);
}

std::pair<std::size_t, double> argmax_with_confidence(const Tensor& probs) {
  std::size_t best = 0;
  double best_p = probs[0];
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > best_p) {
      best = i;
      best_p = probs[i];
    }
  }
  return {best, best_p};
}

std::pair<std::size_t, double> predict(const Model& model, const Tensor& image) {
  return argmax_with_confidence(forward(model, image));
}

void snap_params_to_f32(Model& model) {
  for (LayerParams& p : model.params) {
    for (std::size_t i = 0; i < p.kernel.size(); ++i) p.kernel[i] = snap_to_f32(p.kernel[i]);
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = snap_to_f32(p.bias[i]);
  }
}

std::size_t weight_payload_bytes(const ModelSpec& spec) { return parameter_count(spec) * 4; }

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  char buf[4];
  if (!in.read(buf, 4)) throw std::runtime_error(path + ": truncated weight file");
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

std::uint8_t read_u8(std::istream& in, const std::string& path) {
  int c = in.get();
  if (c == EOF) throw std::runtime_error(path + ": truncated weight file");
  return static_cast<std::uint8_t>(c);
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
  std::vector<float> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<float>(t[i]);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
}

Tensor read_tensor(std::istream& in, const std::string& path) {
  std::uint32_t rank = read_u32(in, path);
  if (rank == 0 || rank > 8) throw std::runtime_error(path + ": corrupt tensor rank in weight file");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = read_u32(in, path);
  std::vector<float> data(shape_product(shape));
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float)))) {
    throw std::runtime_error(path + ": truncated weight file");
  }
  std::vector<double> wide(data.begin(), data.end());
  return Tensor(std::move(shape), std::move(wide));
}

}  // namespace

void save_weights(const Model& model, const std::string& path) {
  validate_spec(model.spec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kWeightMagic, 4);
  write_u32(out, kWeightFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(model.spec.layers.size()));
  for (const LayerSpec& l : model.spec.layers) {
    write_u8(out, static_cast<std::uint8_t>(l.kind));
    write_u32(out, static_cast<std::uint32_t>(l.width));
    write_u32(out, static_cast<std::uint32_t>(l.kernel_size));
    write_u32(out, static_cast<std::uint32_t>(l.stride));
    write_u8(out, l.padding == Padding::Same ? 0 : 1);
  }
  for (const LayerParams& p : model.params) {
    write_tensor(out, p.kernel);
    write_tensor(out, p.bias);
  }
  if (!out) throw std::runtime_error(path + ": write failed");
}

Model load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open weight file");
  char magic[4];
  if (!in.read(magic, 4)) throw std::runtime_error(path + ": truncated weight file");
  if (std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw std::runtime_error(path + ": bad magic, not a SPKN weight file");
  }
  std::uint32_t version = read_u32(in, path);
  if (version != kWeightFormatVersion) {
    throw std::runtime_error(path + ": unsupported weight format version " + std::to_string(version));
  }
  std::uint32_t layer_count = read_u32(in, path);
  ModelSpec spec;
  spec.layers.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec l;
    std::uint8_t kind = read_u8(in, path);
    if (kind > static_cast<std::uint8_t>(LayerKind::Softmax)) {
      throw std::runtime_error(path + ": unknown layer kind " + std::to_string(kind));
    }
    l.kind = static_cast<LayerKind>(kind);
    l.width = read_u32(in, path);
    l.kernel_size = read_u32(in, path);
    l.stride = read_u32(in, path);
    l.padding = read_u8(in, path) == 0 ? Padding::Same : Padding::Valid;
    spec.layers.push_back(l);
  }

  Model model;
  std::vector<Tensor> kernels, biases;
  for (const LayerSpec& l : spec.layers) {
    if (!l.has_params()) continue;
    kernels.push_back(read_tensor(in, path));
    biases.push_back(read_tensor(in, path));
  }

  // input_channels and num_classes are implied by the stored tensors.
  spec.input_channels = 1;
  std::size_t slot = 0;
  for (const LayerSpec& l : spec.layers) {
    if (!l.has_params()) continue;
    if (l.kind == LayerKind::Dense) {
      spec.input_channels = kernels[slot].rank() == 2 ? kernels[slot].dim(0) : 1;
    } else {
      spec.input_channels = kernels[slot].dim(2);
    }
    break;
  }
  for (const LayerSpec& l : spec.layers) {
    if (l.has_params()) spec.num_classes = l.kind == LayerKind::Depthwise ? spec.num_classes : l.width;
  }

  auto expected = parameter_shapes(spec);
  if (expected.size() != kernels.size()) {
    throw std::runtime_error(path + ": parameter tensor count does not match embedded spec");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (kernels[i].shape() != expected[i].first || biases[i].shape() != expected[i].second) {
      throw std::runtime_error(path + ": tensor shape " + shape_to_string(kernels[i].shape()) +
                               " disagrees with embedded spec " + shape_to_string(expected[i].first));
    }
  }

  model.spec = std::move(spec);
  std::size_t layer_index = 0;
  std::size_t k = 0;
  for (const LayerSpec& l : model.spec.layers) {
    if (l.has_params()) {
      model.params.push_back({layer_index, std::move(kernels[k]), std::move(biases[k])});
      ++k;
    }
    ++layer_index;
  }
  return model;
}

}  // namespace speckle

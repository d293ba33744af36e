#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "speckle/ops.hpp"
#include "speckle/tensor.hpp"

namespace speckle {

enum class LayerKind : std::uint8_t {
  Conv = 0,
  Depthwise = 1,
  Pointwise = 2,
  ReLU = 3,
  GAP = 4,
  Dense = 5,
  Softmax = 6,
};

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  std::size_t width = 0;        // filters for Conv/Pointwise, neurons for Dense
  std::size_t kernel_size = 0;  // square kernels only
  std::size_t stride = 1;
  Padding padding = Padding::Same;

  bool has_params() const {
    return kind == LayerKind::Conv || kind == LayerKind::Depthwise ||
           kind == LayerKind::Pointwise || kind == LayerKind::Dense;
  }
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::size_t input_channels = 1;
  std::size_t num_classes = 0;
};

/// Parameter tensors for one layer: kernel/weights plus bias.
struct LayerParams {
  std::size_t layer_index = 0;
  Tensor kernel;
  Tensor bias;
};

struct Model {
  ModelSpec spec;
  std::vector<LayerParams> params;  // one entry per parameterized layer, in layer order
};

/// Gradients aligned with Model::params.
struct Gradients {
  std::vector<Tensor> kernel;
  std::vector<Tensor> bias;
};

/// Activations captured during a forward pass; activations[i] is the input of layer i,
/// activations.back() is the network output.
struct ForwardTrace {
  std::vector<Tensor> activations;
};

/// The full architecture: Conv(32,3x3,s2) -> ReLU -> Depthwise(3x3,s1) -> ReLU ->
/// Pointwise(128) -> ReLU -> Pointwise(256,s2) -> ReLU -> GAP ->
/// Dense(512) -> ReLU -> Dense(256) -> ReLU -> Dense(128) -> ReLU -> Dense(59) -> Softmax.
ModelSpec canonical_spec();

/// Validates the layer chain and throws std::invalid_argument on inconsistency.
void validate_spec(const ModelSpec& spec);

/// Kernel/weights shapes implied by the spec, one entry per parameterized layer.
std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> parameter_shapes(
    const ModelSpec& spec);

std::size_t parameter_count(const ModelSpec& spec);

/// Per-layer output shapes for a given spatial input, in layer order.
std::vector<std::vector<std::size_t>> layer_output_shapes(const ModelSpec& spec, std::size_t h,
                                                          std::size_t w);

/// He-uniform kernels (bound sqrt(6/fan_in)), zero biases. Deterministic per seed.
/// All values are exactly representable as 32-bit floats so serialization is lossless.
Model init_model(const ModelSpec& spec, std::uint64_t seed);

Tensor forward(const Model& model, const Tensor& image);
ForwardTrace forward_trace(const Model& model, const Tensor& image);

/// Backpropagates a gradient given with respect to the final-layer logits
/// (i.e. after fusing softmax with the loss). Returns parameter gradients and,
/// optionally, the gradient with respect to the input image.
Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
                   Tensor* grad_input = nullptr);

/// Gradient of cross-entropy(softmax(logits), label) via the fused form probs - one_hot.
Gradients backward_cross_entropy(const Model& model, const ForwardTrace& trace, std::size_t label,
                                 Tensor* grad_input = nullptr);

std::pair<std::size_t, double> predict(const Model& model, const Tensor& image);

/// Argmax with lowest-index tie breaking.
std::pair<std::size_t, double> argmax_with_confidence(const Tensor& probs);

/// Rounds a value through 32-bit float precision.
inline double snap_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }
/// Snaps every parameter through 32-bit float precision, in place.
void snap_params_to_f32(Model& model);

// Binary little-endian weight file:
//   magic "SPKN", version u32,
//   layer count u32, per layer { kind u8, filters u32, kernel u32, stride u32, padding u8 },
//   then per parameterized layer, kernel then bias:
//     { rank u32, dims u32 x rank, f32 data row-major }.
inline constexpr char kWeightMagic[4] = {'S', 'P', 'K', 'N'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_weights(const Model& model, const std::string& path);
Model load_weights(const std::string& path);

/// Bytes of float32 tensor data a saved model carries (parameter_count * 4).
std::size_t weight_payload_bytes(const ModelSpec& spec);

}  // namespace speckle

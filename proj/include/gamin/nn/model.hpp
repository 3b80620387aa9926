#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "gamin/nn/architecture.hpp"
#include "gamin/nn/tensor.hpp"

namespace gamin::nn {

using Rng = std::mt19937_64;

enum class Mode { train, infer };

template <typename T>
struct LayerParams {
  std::vector<T> weights;  // dense: [units, in]; conv2d: [filters, channels, k, k]
  std::vector<T> bias;

  friend bool operator==(const LayerParams& a, const LayerParams& b) {
    return a.weights == b.weights && a.bias == b.bias;
  }
};

// One entry per layer, empty for parameterless layers.
template <typename T>
struct ModelParams {
  std::vector<LayerParams<T>> layers;
  std::uint64_t seed = 0;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.seed = seed;
    for (const auto& l : layers) {
      out.layers.push_back({std::vector<U>(l.weights.begin(), l.weights.end()),
                            std::vector<U>(l.bias.begin(), l.bias.end())});
    }
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.seed == b.seed && a.layers == b.layers;
  }
};

template <typename T>
struct Model {
  ArchitectureSpec spec;
  ModelParams<T> params;
};

// Glorot-uniform weights, zero biases.
template <typename T>
ModelParams<T> init_params(const ArchitectureSpec& spec, std::uint64_t seed);

template <typename T>
Model<T> make_model(ArchitectureSpec spec, std::uint64_t seed) {
  auto params = init_params<T>(spec, seed);
  return Model<T>{std::move(spec), std::move(params)};
}

// Throws ShapeError when the parameter arrays do not match the spec.
template <typename T>
void check_congruent(const ArchitectureSpec& spec, const ModelParams<T>& params);

// Intermediate values kept by a forward pass so gradients can be taken later.
// activations[0] is the network input, activations[i + 1] the output of layer i.
template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> activations;
  std::vector<std::vector<T>> scratch;               // conv2d im2col columns, dropout mask
  std::vector<std::vector<std::uint32_t>> indices;   // maxpool argmax positions
};

// Runs the network on a batch whose leading extent is the batch size and whose
// remaining extents hold spec.input_size() elements per sample. Returns
// [batch, output_dim]. `rng` drives dropout and is only touched in train mode.
template <typename T>
BasicTensor<T> forward(const Model<T>& model, const BasicTensor<T>& batch, Mode mode, Rng* rng = nullptr,
                       ForwardTrace<T>* trace = nullptr);

// Parameter gradients, congruent with ModelParams.
template <typename T>
using Gradients = std::vector<LayerParams<T>>;

template <typename T>
Gradients<T> zero_gradients(const ModelParams<T>& params);

// Back-propagates dLoss/dOutput through a recorded trace. Parameter gradients
// are accumulated into `param_grads` when it is non-null; the gradient with
// respect to the network input is returned when `want_input_grad` is set
// (an empty tensor otherwise).
template <typename T>
BasicTensor<T> backward(const Model<T>& model, const ForwardTrace<T>& trace, const BasicTensor<T>& grad_output,
                        Gradients<T>* param_grads, bool want_input_grad);

}  // namespace gamin::nn

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gamin/nn/tensor.hpp"

namespace gamin::nn {

enum class LayerKind { dense, conv2d, maxpool2d, dropout, flatten, reshape };
enum class Activation { identity, relu, softmax, tanh };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation activation);
std::optional<LayerKind> parse_layer_kind(std::string_view text);
std::optional<Activation> parse_activation(std::string_view text);

// One entry of a layer sequence. Which size fields are meaningful depends on
// the kind: `units` is the width of a dense layer or the filter count of a
// convolution, `extent` is the convolution kernel or pooling window.
// Convolutions are valid-mode with stride 1; pooling stride equals its window.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t units = 0;
  std::size_t extent = 0;
  double drop = 0.0;
  Shape target;
  Activation activation = Activation::identity;

  static LayerSpec dense(std::size_t units, Activation activation);
  static LayerSpec conv2d(std::size_t filters, std::size_t kernel, Activation activation);
  static LayerSpec maxpool2d(std::size_t window);
  static LayerSpec dropout(double probability);
  static LayerSpec flatten();
  static LayerSpec reshape(Shape target);

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
  Shape input;  // per-sample shape, e.g. {784} or {1, 28, 28}
  std::size_t output_dim = 0;
  std::vector<LayerSpec> layers;

  std::size_t input_size() const { return shape_size(input); }

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

// Per-sample shape after every layer (index 0 is the input shape). Throws
// ShapeError naming the first layer whose input does not fit.
std::vector<Shape> layer_shapes(const ArchitectureSpec& spec);

// Weight and bias element counts of layer `index`; zero for parameterless kinds.
struct ParamCounts {
  std::size_t weights = 0;
  std::size_t bias = 0;
};
std::vector<ParamCounts> param_counts(const ArchitectureSpec& spec);
std::size_t total_param_count(const ArchitectureSpec& spec);

std::string describe(const ArchitectureSpec& spec);

}  // namespace gamin::nn

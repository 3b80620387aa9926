#include "gamin/nn/architecture.hpp"

#include <array>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace gamin::nn {

std::string to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 6> kKindNames{{
    {LayerKind::dense, "dense"},
    {LayerKind::conv2d, "conv2d"},
    {LayerKind::maxpool2d, "maxpool2d"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::flatten, "flatten"},
    {LayerKind::reshape, "reshape"},
}};

constexpr std::array<std::pair<Activation, std::string_view>, 4> kActivationNames{{
    {Activation::identity, "identity"},
    {Activation::relu, "relu"},
    {Activation::softmax, "softmax"},
    {Activation::tanh, "tanh"},
}};

std::string layer_label(std::size_t index, const LayerSpec& layer) {
  return fmt::format("layer {} ({})", index, to_string(layer.kind));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::string_view to_string(Activation activation) {
  for (const auto& [a, name] : kActivationNames) {
    if (a == activation) return name;
  }
  return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

std::optional<Activation> parse_activation(std::string_view text) {
  for (const auto& [a, name] : kActivationNames) {
    if (name == text) return a;
  }
  return std::nullopt;
}

LayerSpec LayerSpec::dense(std::size_t units, Activation activation) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.units = units;
  l.activation = activation;
  return l;
}

LayerSpec LayerSpec::conv2d(std::size_t filters, std::size_t kernel, Activation activation) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.units = filters;
  l.extent = kernel;
  l.activation = activation;
  return l;
}

LayerSpec LayerSpec::maxpool2d(std::size_t window) {
  LayerSpec l;
  l.kind = LayerKind::maxpool2d;
  l.extent = window;
  return l;
}

LayerSpec LayerSpec::dropout(double probability) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.drop = probability;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::flatten;
  return l;
}

LayerSpec LayerSpec::reshape(Shape target) {
  LayerSpec l;
  l.kind = LayerKind::reshape;
  l.target = std::move(target);
  return l;
}

std::vector<Shape> layer_shapes(const ArchitectureSpec& spec) {
  if (spec.input.empty() || shape_size(spec.input) == 0) {
    throw ShapeError("architecture input shape must be non-empty, got " + to_string(spec.input));
  }
  std::vector<Shape> shapes{spec.input};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const Shape& in = shapes.back();
    Shape out;
    switch (layer.kind) {
      case LayerKind::dense:
        if (layer.units == 0) throw ShapeError(layer_label(i, layer) + ": zero units");
        out = {layer.units};
        break;
      case LayerKind::conv2d:
      case LayerKind::maxpool2d: {
        if (in.size() != 3) {
          throw ShapeError(fmt::format("{}: expects a [channels, height, width] input, got {}",
                                       layer_label(i, layer), to_string(in)));
        }
        if (layer.extent == 0 || layer.extent > in[1] || layer.extent > in[2]) {
          throw ShapeError(fmt::format("{}: extent {} does not fit input {}", layer_label(i, layer),
                                       layer.extent, to_string(in)));
        }
        if (layer.kind == LayerKind::conv2d) {
          if (layer.units == 0) throw ShapeError(layer_label(i, layer) + ": zero filters");
          out = {layer.units, in[1] - layer.extent + 1, in[2] - layer.extent + 1};
        } else {
          out = {in[0], in[1] / layer.extent, in[2] / layer.extent};
        }
        break;
      }
      case LayerKind::dropout:
        if (!(layer.drop >= 0.0 && layer.drop < 1.0)) {
          throw ShapeError(fmt::format("{}: drop probability {} outside [0, 1)", layer_label(i, layer),
                                       layer.drop));
        }
        out = in;
        break;
      case LayerKind::flatten:
        out = {shape_size(in)};
        break;
      case LayerKind::reshape:
        if (layer.target.empty() || shape_size(layer.target) != shape_size(in)) {
          throw ShapeError(fmt::format("{}: cannot reshape {} to {}", layer_label(i, layer), to_string(in),
                                       to_string(layer.target)));
        }
        out = layer.target;
        break;
    }
    if (layer.activation == Activation::softmax && out.size() != 1) {
      throw ShapeError(layer_label(i, layer) + ": softmax needs a flat output");
    }
    if (!layer.has_params() && layer.activation != Activation::identity) {
      throw ShapeError(layer_label(i, layer) + ": activation is only allowed on dense and conv2d layers");
    }
    shapes.push_back(std::move(out));
  }
  if (shape_size(shapes.back()) != spec.output_dim) {
    throw ShapeError(fmt::format("final output {} does not match declared output dimension {}",
                                 to_string(shapes.back()), spec.output_dim));
  }
  return shapes;
}

std::vector<ParamCounts> param_counts(const ArchitectureSpec& spec) {
  const auto shapes = layer_shapes(spec);
  std::vector<ParamCounts> counts(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (layer.kind == LayerKind::dense) {
      counts[i] = {layer.units * shape_size(shapes[i]), layer.units};
    } else if (layer.kind == LayerKind::conv2d) {
      counts[i] = {layer.units * shapes[i][0] * layer.extent * layer.extent, layer.units};
    }
  }
  return counts;
}

std::size_t total_param_count(const ArchitectureSpec& spec) {
  std::size_t total = 0;
  for (const auto& c : param_counts(spec)) total += c.weights + c.bias;
  return total;
}

std::string describe(const ArchitectureSpec& spec) {
  const auto shapes = layer_shapes(spec);
  std::string out = fmt::format("input {}\n", to_string(spec.input));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    out += fmt::format("  {:<10} {:<8} -> {}\n", to_string(spec.layers[i].kind),
                       to_string(spec.layers[i].activation), to_string(shapes[i + 1]));
  }
  return out;
}

}  // namespace gamin::nn

#include "gamin/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <fmt/format.h>

namespace gamin::nn {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct ConvGeometry {
  std::size_t channels, height, width;  // input
  std::size_t filters, kernel;
  std::size_t out_h, out_w;

  std::size_t cols_rows() const { return channels * kernel * kernel; }
  std::size_t positions() const { return out_h * out_w; }
  std::size_t in_size() const { return channels * height * width; }
};

ConvGeometry conv_geometry(const Shape& in, const LayerSpec& layer) {
  return {in[0], in[1], in[2], layer.units, layer.extent, in[1] - layer.extent + 1, in[2] - layer.extent + 1};
}

// cols[(c * k + ky) * k + kx][oy * out_w + ox] = x[c][oy + ky][ox + kx]
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t positions = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = cols + ((c * g.kernel + ky) * g.kernel + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const T* src = x + (c * g.height + oy + ky) * g.width + kx;
          std::copy(src, src + g.out_w, dst + oy * g.out_w);
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t positions = g.positions();
  std::fill(dx, dx + g.in_size(), T{0});
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = cols + ((c * g.kernel + ky) * g.kernel + kx) * positions;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          T* dst = dx + (c * g.height + oy + ky) * g.width + kx;
          const T* row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] += row[ox];
        }
      }
    }
  }
}

template <typename T>
void apply_activation(Activation activation, BasicTensor<T>& y) {
  switch (activation) {
    case Activation::identity:
      return;
    case Activation::relu:
      for (T& v : y.values()) v = v > T{0} ? v : T{0};
      return;
    case Activation::tanh:
      for (T& v : y.values()) v = std::tanh(v);
      return;
    case Activation::softmax: {
      const std::size_t n = y.row_size();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        T* row = y.data() + r * n;
        const T peak = *std::max_element(row, row + n);
        T total{0};
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - peak);
          total += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= total;
      }
      return;
    }
  }
}

// Turns dL/dy into dL/dz in place, where y = activation(z).
template <typename T>
void activation_backward(Activation activation, const BasicTensor<T>& y, BasicTensor<T>& grad) {
  switch (activation) {
    case Activation::identity:
      return;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(y[i] > T{0})) grad[i] = T{0};
      }
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= T{1} - y[i] * y[i];
      return;
    case Activation::softmax: {
      const std::size_t n = y.row_size();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const T* p = y.data() + r * n;
        T* g = grad.data() + r * n;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * p[j];
        for (std::size_t j = 0; j < n; ++j) g[j] = p[j] * (g[j] - dot);
      }
      return;
    }
  }
}

Shape batched(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
  const auto shapes = layer_shapes(spec);
  const auto counts = param_counts(spec);
  Rng rng(seed);
  ModelParams<T> params;
  params.seed = seed;
  params.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (!layer.has_params()) continue;
    double fan_in = 0, fan_out = 0;
    if (layer.kind == LayerKind::dense) {
      fan_in = static_cast<double>(shape_size(shapes[i]));
      fan_out = static_cast<double>(layer.units);
    } else {
      const double area = static_cast<double>(layer.extent * layer.extent);
      fan_in = static_cast<double>(shapes[i][0]) * area;
      fan_out = static_cast<double>(layer.units) * area;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    auto& lp = params.layers[i];
    lp.weights.resize(counts[i].weights);
    for (T& w : lp.weights) w = static_cast<T>(uniform(rng));
    lp.bias.assign(counts[i].bias, T{0});
  }
  return params;
}

template <typename T>
void check_congruent(const ArchitectureSpec& spec, const ModelParams<T>& params) {
  const auto counts = param_counts(spec);
  if (params.layers.size() != counts.size()) {
    throw ShapeError(fmt::format("parameters describe {} layers, architecture has {}", params.layers.size(),
                                 counts.size()));
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (params.layers[i].weights.size() != counts[i].weights || params.layers[i].bias.size() != counts[i].bias) {
      throw ShapeError(fmt::format("layer {} ({}): expected {} weights + {} biases, got {} + {}", i,
                                   to_string(spec.layers[i].kind), counts[i].weights, counts[i].bias,
                                   params.layers[i].weights.size(), params.layers[i].bias.size()));
    }
  }
}

template <typename T>
BasicTensor<T> forward(const Model<T>& model, const BasicTensor<T>& batch, Mode mode, Rng* rng,
                       ForwardTrace<T>* trace) {
  const ArchitectureSpec& spec = model.spec;
  const auto shapes = layer_shapes(spec);
  if (batch.rank() < 1 || (batch.rows() > 0 && batch.row_size() != spec.input_size())) {
    throw ShapeError(fmt::format("layer 0 ({}): expects {} values per sample, got batch of shape {}",
                                 spec.layers.empty() ? "input" : to_string(spec.layers[0].kind),
                                 spec.input_size(), to_string(batch.shape())));
  }
  if (model.params.layers.size() != spec.layers.size()) check_congruent(spec, model.params);
  const std::size_t n = batch.rows();

  BasicTensor<T> current = batch;
  current.reshape(batched(n, spec.input));
  if (trace) {
    trace->activations.clear();
    trace->activations.reserve(spec.layers.size() + 1);
    trace->activations.push_back(std::move(current));
    trace->scratch.assign(spec.layers.size(), {});
    trace->indices.assign(spec.layers.size(), {});
  }

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const LayerParams<T>& lp = model.params.layers[i];
    const Shape& in_shape = shapes[i];
    const Shape& out_shape = shapes[i + 1];
    const BasicTensor<T>& x = trace ? trace->activations.back() : current;
    BasicTensor<T> y(batched(n, out_shape));

    switch (layer.kind) {
      case LayerKind::dense: {
        const auto in = static_cast<Eigen::Index>(shape_size(in_shape));
        const auto units = static_cast<Eigen::Index>(layer.units);
        Eigen::Map<const MatR<T>> X(x.data(), static_cast<Eigen::Index>(n), in);
        Eigen::Map<const MatR<T>> W(lp.weights.data(), units, in);
        Eigen::Map<const RowVec<T>> b(lp.bias.data(), units);
        Eigen::Map<MatR<T>> Y(y.data(), static_cast<Eigen::Index>(n), units);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += b;
        break;
      }
      case LayerKind::conv2d: {
        const ConvGeometry g = conv_geometry(in_shape, layer);
        const auto K = static_cast<Eigen::Index>(g.cols_rows());
        const auto P = static_cast<Eigen::Index>(g.positions());
        const auto F = static_cast<Eigen::Index>(g.filters);
        std::vector<T> local_cols;
        std::vector<T>& cols = trace ? trace->scratch[i] : local_cols;
        cols.resize(trace ? n * g.cols_rows() * g.positions() : g.cols_rows() * g.positions());
        Eigen::Map<const MatR<T>> W(lp.weights.data(), F, K);
        Eigen::Map<const Vec<T>> b(lp.bias.data(), F);
        for (std::size_t s = 0; s < n; ++s) {
          T* sample_cols = trace ? cols.data() + s * g.cols_rows() * g.positions() : cols.data();
          im2col(x.data() + s * g.in_size(), g, sample_cols);
          Eigen::Map<const MatR<T>> C(sample_cols, K, P);
          Eigen::Map<MatR<T>> Y(y.data() + s * g.filters * g.positions(), F, P);
          Y.noalias() = W * C;
          Y.colwise() += b;
        }
        break;
      }
      case LayerKind::maxpool2d: {
        const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
        const std::size_t oh = out_shape[1], ow = out_shape[2], k = layer.extent;
        std::vector<std::uint32_t>* idx = trace ? &trace->indices[i] : nullptr;
        if (idx) idx->resize(y.size());
        for (std::size_t s = 0; s < n; ++s) {
          const T* xs = x.data() + s * c * h * w;
          T* ys = y.data() + s * c * oh * ow;
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (ch * h + oy * k) * w + ox * k;
                for (std::size_t dy = 0; dy < k; ++dy) {
                  for (std::size_t dx = 0; dx < k; ++dx) {
                    const std::size_t at = (ch * h + oy * k + dy) * w + ox * k + dx;
                    if (xs[at] > xs[best]) best = at;
                  }
                }
                const std::size_t o = (ch * oh + oy) * ow + ox;
                ys[o] = xs[best];
                if (idx) (*idx)[s * c * oh * ow + o] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        break;
      }
      case LayerKind::dropout: {
        if (mode == Mode::train && layer.drop > 0.0) {
          if (!rng) throw Error(fmt::format("layer {} (dropout): train mode needs a random source", i));
          std::vector<T> local_mask;
          std::vector<T>& mask = trace ? trace->scratch[i] : local_mask;
          mask.resize(x.size());
          const T keep_scale = static_cast<T>(1.0 / (1.0 - layer.drop));
          std::uniform_real_distribution<double> uniform(0.0, 1.0);
          for (std::size_t j = 0; j < x.size(); ++j) {
            mask[j] = uniform(*rng) >= layer.drop ? keep_scale : T{0};
            y[j] = x[j] * mask[j];
          }
        } else {
          std::copy(x.data(), x.data() + x.size(), y.data());
        }
        break;
      }
      case LayerKind::flatten:
      case LayerKind::reshape:
        std::copy(x.data(), x.data() + x.size(), y.data());
        break;
    }

    apply_activation(layer.activation, y);
    if (trace) {
      trace->activations.push_back(std::move(y));
    } else {
      current = std::move(y);
    }
  }
  BasicTensor<T> out = trace ? trace->activations.back() : std::move(current);
  out.reshape({n, spec.output_dim});
  return out;
}

template <typename T>
Gradients<T> zero_gradients(const ModelParams<T>& params) {
  Gradients<T> grads(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    grads[i].weights.assign(params.layers[i].weights.size(), T{0});
    grads[i].bias.assign(params.layers[i].bias.size(), T{0});
  }
  return grads;
}

template <typename T>
BasicTensor<T> backward(const Model<T>& model, const ForwardTrace<T>& trace, const BasicTensor<T>& grad_output,
                        Gradients<T>* param_grads, bool want_input_grad) {
  const ArchitectureSpec& spec = model.spec;
  const auto shapes = layer_shapes(spec);
  if (trace.activations.size() != spec.layers.size() + 1) {
    throw Error("backward: trace does not belong to this architecture");
  }
  const std::size_t n = trace.activations.front().rows();
  if (grad_output.size() != n * spec.output_dim) {
    throw ShapeError(fmt::format("backward: output gradient of shape {} does not match [{}, {}]",
                                 to_string(grad_output.shape()), n, spec.output_dim));
  }
  if (param_grads && param_grads->size() != spec.layers.size()) *param_grads = zero_gradients(model.params);

  BasicTensor<T> g = grad_output;
  g.reshape(batched(n, shapes.back()));

  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const LayerSpec& layer = spec.layers[li];
    const LayerParams<T>& lp = model.params.layers[li];
    const BasicTensor<T>& x = trace.activations[li];
    const BasicTensor<T>& y = trace.activations[li + 1];
    const Shape& in_shape = shapes[li];
    const bool need_dx = li > 0 || want_input_grad;

    activation_backward(layer.activation, y, g);
    BasicTensor<T> dx;

    switch (layer.kind) {
      case LayerKind::dense: {
        const auto in = static_cast<Eigen::Index>(shape_size(in_shape));
        const auto units = static_cast<Eigen::Index>(layer.units);
        const auto rows = static_cast<Eigen::Index>(n);
        Eigen::Map<const MatR<T>> G(g.data(), rows, units);
        Eigen::Map<const MatR<T>> X(x.data(), rows, in);
        if (param_grads) {
          auto& pg = (*param_grads)[li];
          Eigen::Map<MatR<T>> dW(pg.weights.data(), units, in);
          dW.noalias() += G.transpose() * X;
          // Plain loops: Eigen reductions vary their summation order with the
          // alignment of the buffer, which breaks run-to-run reproducibility.
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t u = 0; u < layer.units; ++u) pg.bias[u] += g[r * layer.units + u];
          }
        }
        if (need_dx) {
          dx = BasicTensor<T>(batched(n, in_shape));
          Eigen::Map<const MatR<T>> W(lp.weights.data(), units, in);
          Eigen::Map<MatR<T>> dX(dx.data(), rows, in);
          dX.noalias() = G * W;
        }
        break;
      }
      case LayerKind::conv2d: {
        const ConvGeometry geo = conv_geometry(in_shape, layer);
        const auto K = static_cast<Eigen::Index>(geo.cols_rows());
        const auto P = static_cast<Eigen::Index>(geo.positions());
        const auto F = static_cast<Eigen::Index>(geo.filters);
        const std::vector<T>& cols = trace.scratch[li];
        Eigen::Map<const MatR<T>> W(lp.weights.data(), F, K);
        if (need_dx) dx = BasicTensor<T>(batched(n, in_shape));
        std::vector<T> dcols(need_dx ? geo.cols_rows() * geo.positions() : 0);
        for (std::size_t s = 0; s < n; ++s) {
          Eigen::Map<const MatR<T>> G(g.data() + s * geo.filters * geo.positions(), F, P);
          if (param_grads) {
            auto& pg = (*param_grads)[li];
            Eigen::Map<const MatR<T>> C(cols.data() + s * geo.cols_rows() * geo.positions(), K, P);
            Eigen::Map<MatR<T>> dW(pg.weights.data(), F, K);
            dW.noalias() += G * C.transpose();
            const T* gs = g.data() + s * geo.filters * geo.positions();
            for (std::size_t f = 0; f < geo.filters; ++f) {
              T total{0};
              for (std::size_t p = 0; p < geo.positions(); ++p) total += gs[f * geo.positions() + p];
              pg.bias[f] += total;
            }
          }
          if (need_dx) {
            Eigen::Map<MatR<T>> dC(dcols.data(), K, P);
            dC.noalias() = W.transpose() * G;
            col2im(dcols.data(), geo, dx.data() + s * geo.in_size());
          }
        }
        break;
      }
      case LayerKind::maxpool2d: {
        if (need_dx) {
          dx = BasicTensor<T>(batched(n, in_shape));
          const std::size_t in_size = shape_size(in_shape);
          const std::size_t out_size = g.row_size();
          const auto& idx = trace.indices[li];
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t o = 0; o < out_size; ++o) {
              dx[s * in_size + idx[s * out_size + o]] += g[s * out_size + o];
            }
          }
        }
        break;
      }
      case LayerKind::dropout: {
        dx = std::move(g);
        const std::vector<T>& mask = trace.scratch[li];
        if (!mask.empty()) {
          for (std::size_t j = 0; j < dx.size(); ++j) dx[j] *= mask[j];
        }
        break;
      }
      case LayerKind::flatten:
      case LayerKind::reshape:
        dx = std::move(g);
        dx.reshape(batched(n, in_shape));
        break;
    }
    if (!need_dx) return {};
    g = std::move(dx);
  }
  return g;
}

#define GAMIN_INSTANTIATE(T)                                                                               \
  template ModelParams<T> init_params<T>(const ArchitectureSpec&, std::uint64_t);                         \
  template void check_congruent<T>(const ArchitectureSpec&, const ModelParams<T>&);                       \
  template BasicTensor<T> forward<T>(const Model<T>&, const BasicTensor<T>&, Mode, Rng*, ForwardTrace<T>*); \
  template Gradients<T> zero_gradients<T>(const ModelParams<T>&);                                          \
  template BasicTensor<T> backward<T>(const Model<T>&, const ForwardTrace<T>&, const BasicTensor<T>&,       \
                                      Gradients<T>*, bool);

GAMIN_INSTANTIATE(float)
GAMIN_INSTANTIATE(double)

#undef GAMIN_INSTANTIATE

}  // namespace gamin::nn

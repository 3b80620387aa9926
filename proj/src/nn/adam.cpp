#include "gamin/nn/adam.hpp"

#include <cmath>

#include <fmt/format.h>

namespace gamin::nn {

template <typename T>
void check_finite(const Gradients<T>& grads) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (const auto* array : {&grads[i].weights, &grads[i].bias}) {
      for (T g : *array) {
        if (!std::isfinite(g)) throw NumericalError(fmt::format("non-finite gradient in layer {}", i));
      }
    }
  }
}

template <typename T>
void adam_update(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
  if (grads.size() != params.layers.size() || state.first_moment.size() != params.layers.size()) {
    throw ShapeError("adam_update: gradients or moments are not congruent with the parameters");
  }
  check_finite(grads);
  state.step += 1;
  const AdamSettings& s = state.settings;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(s.beta1, t);
  const double correction2 = 1.0 - std::pow(s.beta2, t);

  auto update = [&](std::vector<T>& theta, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v) {
    if (g.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
      throw ShapeError("adam_update: moment array length mismatch");
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = s.beta1 * m[j] + (1.0 - s.beta1) * gj;
      const double vj = s.beta2 * v[j] + (1.0 - s.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      theta[j] = static_cast<T>(theta[j] - s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon));
    }
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weights, grads[i].weights, state.first_moment[i].weights, state.second_moment[i].weights);
    update(params.layers[i].bias, grads[i].bias, state.first_moment[i].bias, state.second_moment[i].bias);
  }
}

template <typename T>
void sgd_update(ModelParams<T>& params, const Gradients<T>& grads, double learning_rate) {
  check_finite(grads);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& w = params.layers[i].weights;
    auto& b = params.layers[i].bias;
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<T>(w[j] - learning_rate * grads[i].weights[j]);
    for (std::size_t j = 0; j < b.size(); ++j) b[j] = static_cast<T>(b[j] - learning_rate * grads[i].bias[j]);
  }
}

template void check_finite<float>(const Gradients<float>&);
template void check_finite<double>(const Gradients<double>&);
template void adam_update<float>(ModelParams<float>&, const Gradients<float>&, AdamState<float>&);
template void adam_update<double>(ModelParams<double>&, const Gradients<double>&, AdamState<double>&);
template void sgd_update<float>(ModelParams<float>&, const Gradients<float>&, double);
template void sgd_update<double>(ModelParams<double>&, const Gradients<double>&, double);

}  // namespace gamin::nn

#pragma once

#include <cstdint>

#include "gamin/nn/model.hpp"

namespace gamin::nn {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment arrays are congruent with the parameters they update.
template <typename T>
struct AdamState {
  AdamSettings settings;
  Gradients<T> first_moment;
  Gradients<T> second_moment;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> make_adam(const ModelParams<T>& params, AdamSettings settings) {
  return AdamState<T>{settings, zero_gradients(params), zero_gradients(params), 0};
}

// Throws NumericalError naming the first layer holding a NaN/Inf gradient.
template <typename T>
void check_finite(const Gradients<T>& grads);

// One bias-corrected Adam step. Nothing is modified when the gradients are not
// finite.
template <typename T>
void adam_update(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state);

// Plain gradient descent: params -= learning_rate * grads.
template <typename T>
void sgd_update(ModelParams<T>& params, const Gradients<T>& grads, double learning_rate);

}  // namespace gamin::nn

#pragma once

#include <span>

#include "gamin/nn/tensor.hpp"

namespace gamin::nn {

// Floor applied to predicted probabilities before taking the log.
inline constexpr double kLogClamp = 1e-7;

// Mean over the batch of -sum_i y_i log(max(yhat_i, kLogClamp)). Both tensors
// must have the same shape; the leading extent is the batch.
template <typename T>
double cross_entropy(const BasicTensor<T>& target, const BasicTensor<T>& predicted);

// d cross_entropy / d predicted, scaled by `scale`. Entries below the clamp
// floor get zero gradient.
template <typename T>
BasicTensor<T> cross_entropy_grad(const BasicTensor<T>& target, const BasicTensor<T>& predicted, double scale = 1.0);

// Mean of |y_i - yhat_i| over every element.
template <typename T>
double mean_absolute_error(const BasicTensor<T>& target, const BasicTensor<T>& predicted);

}  // namespace gamin::nn

#include "gamin/nn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace gamin::nn {
namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
double cross_entropy(const BasicTensor<T>& target, const BasicTensor<T>& predicted) {
  require_same_shape(target, predicted, "cross_entropy");
  if (target.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double y = target[i];
    if (y == 0.0) continue;
    const double p = std::clamp(static_cast<double>(predicted[i]), kLogClamp, 1.0);
    total -= y * std::log(p);
  }
  const std::size_t rows = target.rank() > 1 ? target.rows() : 1;
  return total / static_cast<double>(rows);
}

template <typename T>
BasicTensor<T> cross_entropy_grad(const BasicTensor<T>& target, const BasicTensor<T>& predicted, double scale) {
  require_same_shape(target, predicted, "cross_entropy_grad");
  BasicTensor<T> grad(predicted.shape());
  const std::size_t rows = target.rank() > 1 ? target.rows() : 1;
  const double factor = scale / static_cast<double>(rows);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double p = predicted[i];
    if (target[i] != T{0} && p > kLogClamp) grad[i] = static_cast<T>(-factor * target[i] / p);
  }
  return grad;
}

template <typename T>
double mean_absolute_error(const BasicTensor<T>& target, const BasicTensor<T>& predicted) {
  require_same_shape(target, predicted, "mean_absolute_error");
  if (target.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    total += std::abs(static_cast<double>(target[i]) - static_cast<double>(predicted[i]));
  }
  return total / static_cast<double>(target.size());
}

template double cross_entropy<float>(const Tensor&, const Tensor&);
template double cross_entropy<double>(const TensorD&, const TensorD&);
template Tensor cross_entropy_grad<float>(const Tensor&, const Tensor&, double);
template TensorD cross_entropy_grad<double>(const TensorD&, const TensorD&, double);
template double mean_absolute_error<float>(const Tensor&, const Tensor&);
template double mean_absolute_error<double>(const TensorD&, const TensorD&);

}  // namespace gamin::nn

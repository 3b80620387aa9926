#pragma once

// Central finite-difference oracle for network gradients. Uses only forward
// passes, so it stays independent of the back-propagation code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "gamin/nn/loss.hpp"
#include "gamin/nn/model.hpp"

namespace gamin::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose stencil straddles a relu or max-pool kink
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Scalar probe loss: cross-entropy against random soft targets when the
// network ends in softmax, a fixed random linear functional otherwise.
class ProbeLoss {
 public:
  ProbeLoss(const nn::ArchitectureSpec& spec, std::size_t batch, std::uint64_t seed)
      : softmax_(!spec.layers.empty() && spec.layers.back().activation == nn::Activation::softmax),
        weights_({batch, spec.output_dim}) {
    nn::Rng rng(seed);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t r = 0; r < batch; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < spec.output_dim; ++j) {
        const double v = softmax_ ? u(rng) : g(rng);
        weights_[r * spec.output_dim + j] = v;
        total += v;
      }
      if (softmax_) {
        for (std::size_t j = 0; j < spec.output_dim; ++j) weights_[r * spec.output_dim + j] /= total;
      }
    }
  }

  double value(const nn::TensorD& out) const {
    if (softmax_) return nn::cross_entropy(weights_, out);
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) total += weights_[i] * out[i];
    return total;
  }

  nn::TensorD grad(const nn::TensorD& out) const {
    if (softmax_) return nn::cross_entropy_grad(weights_, out);
    nn::TensorD g = weights_;
    g.reshape(out.shape());
    return g;
  }

 private:
  bool softmax_;
  nn::TensorD weights_;
};

inline double probe_value(const nn::Model<double>& model, const nn::TensorD& input, const ProbeLoss& loss,
                          std::uint64_t dropout_seed) {
  nn::Rng rng(dropout_seed);
  return loss.value(nn::forward(model, input, nn::Mode::train, &rng));
}

// d evaluate() / d value by central differences at h and h/2, combined by one
// Richardson step that cancels the h^2 truncation term. Returns nothing when the
// two quotients disagree by more than a smooth function allows: the stencil
// then crosses a relu or max-pool switch.
template <typename F>
std::optional<double> numeric_partial(double& value, F&& evaluate, double h = 1e-3) {
  auto central = [&](double step) {
    const double saved = value;
    value = saved + step;
    const double plus = evaluate();
    value = saved - step;
    const double minus = evaluate();
    value = saved;
    return (plus - minus) / (2 * step);
  };
  const double coarse = central(h);
  const double refined = central(h / 2);
  if (relative_error(coarse, refined) > 1e-3) return std::nullopt;
  return (4 * refined - coarse) / 3;
}

// Checks `coords` randomly chosen entries of every weight and bias array (all
// entries when the array is smaller), plus `coords` input entries. Coordinates
// sitting on a kink are counted in `skipped`.
inline GradCheckResult check_gradients(nn::Model<double> model, nn::TensorD input, std::uint64_t seed,
                                       std::size_t coords, double h = 1e-3) {
  const std::uint64_t dropout_seed = seed ^ 0x9e3779b97f4a7c15ULL;
  ProbeLoss loss(model.spec, input.rows(), seed + 1);

  nn::ForwardTrace<double> trace;
  nn::Rng rng(dropout_seed);
  const nn::TensorD out = nn::forward(model, input, nn::Mode::train, &rng, &trace);
  nn::Gradients<double> grads = nn::zero_gradients(model.params);
  const nn::TensorD input_grad = nn::backward(model, trace, loss.grad(out), &grads, true);

  GradCheckResult result;
  nn::Rng pick(seed + 2);
  auto check_array = [&](std::vector<double>& values, const std::vector<double>& analytic, auto&& evaluate) {
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > coords) {
      std::shuffle(idx.begin(), idx.end(), pick);
      idx.resize(coords);
    }
    for (std::size_t j : idx) {
      const auto numeric = numeric_partial(values[j], evaluate, h);
      if (!numeric) {
        ++result.skipped;
        continue;
      }
      result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[j], *numeric));
      ++result.checked;
    }
  };

  auto eval_model = [&] { return probe_value(model, input, loss, dropout_seed); };
  for (std::size_t i = 0; i < model.params.layers.size(); ++i) {
    check_array(model.params.layers[i].weights, grads[i].weights, eval_model);
    check_array(model.params.layers[i].bias, grads[i].bias, eval_model);
  }
  check_array(input.storage(), input_grad.storage(), eval_model);
  return result;
}

}  // namespace gamin::testing

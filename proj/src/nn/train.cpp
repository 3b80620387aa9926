#include "gamin/nn/train.hpp"

#include <cmath>

#include <fmt/format.h>

#include "gamin/nn/loss.hpp"

namespace gamin::nn {

template <typename T>
StepLoss loss_and_gradients(const Model<T>& model, std::span<const LossTerm<T>> terms, Mode mode, Rng* rng,
                            Gradients<T>& grads) {
  if (grads.size() != model.params.layers.size()) grads = zero_gradients(model.params);
  StepLoss loss;
  ForwardTrace<T> trace;
  for (const LossTerm<T>& term : terms) {
    const BasicTensor<T> predicted = forward(model, term.inputs, mode, rng, &trace);
    if (predicted.shape() != term.targets.shape()) {
      throw ShapeError(fmt::format("loss term: targets of shape {} do not match predictions {}",
                                   to_string(term.targets.shape()), to_string(predicted.shape())));
    }
    const double value = cross_entropy(term.targets, predicted);
    if (!std::isfinite(value)) throw NumericalError("non-finite loss value");
    loss.terms.push_back(value);
    loss.total += term.weight * value;
    if (term.weight != 0.0) {
      backward(model, trace, cross_entropy_grad(term.targets, predicted, term.weight), &grads, false);
    }
  }
  return loss;
}

template <typename T>
StepLoss train_step(Model<T>& model, std::span<const LossTerm<T>> terms, AdamState<T>& adam, Rng& rng) {
  Gradients<T> grads;
  StepLoss loss = loss_and_gradients(model, terms, Mode::train, &rng, grads);
  adam_update(model.params, grads, adam);
  return loss;
}

template <typename T>
FrozenComposition<T>::FrozenComposition(Model<T>& generator, const Model<T>& surrogate)
    : generator_(generator), surrogate_(surrogate) {
  if (generator.spec.output_dim != surrogate.spec.input_size()) {
    throw ShapeError(fmt::format("cannot compose: generator emits {} values, surrogate expects {}",
                                 generator.spec.output_dim, surrogate.spec.input_size()));
  }
}

template <typename T>
BasicTensor<T> FrozenComposition<T>::forward(const BasicTensor<T>& latent, Mode generator_mode, Rng* rng) const {
  return nn::forward(surrogate_, nn::forward(generator_, latent, generator_mode, rng), Mode::infer);
}

template <typename T>
double FrozenComposition<T>::loss_and_gradients(const BasicTensor<T>& latent, const BasicTensor<T>& targets,
                                                Mode generator_mode, Rng* rng, Gradients<T>& generator_grads) const {
  if (generator_grads.size() != generator_.params.layers.size()) {
    generator_grads = zero_gradients(generator_.params);
  }
  ForwardTrace<T> gen_trace;
  ForwardTrace<T> sur_trace;
  const BasicTensor<T> generated = nn::forward(generator_, latent, generator_mode, rng, &gen_trace);
  const BasicTensor<T> predicted = nn::forward(surrogate_, generated, Mode::infer, nullptr, &sur_trace);
  const double value = cross_entropy(targets, predicted);
  if (!std::isfinite(value)) throw NumericalError("non-finite combined loss value");
  BasicTensor<T> grad_generated =
      backward<T>(surrogate_, sur_trace, cross_entropy_grad(targets, predicted), nullptr, true);
  grad_generated.reshape(generated.shape());
  backward(generator_, gen_trace, grad_generated, &generator_grads, false);
  return value;
}

template <typename T>
double FrozenComposition<T>::train_step(const BasicTensor<T>& latent, const BasicTensor<T>& targets,
                                        AdamState<T>& generator_adam, Rng& rng) {
  Gradients<T> grads;
  const double value = loss_and_gradients(latent, targets, Mode::train, &rng, grads);
  adam_update(generator_.params, grads, generator_adam);
  return value;
}

template StepLoss loss_and_gradients<float>(const Model<float>&, std::span<const LossTerm<float>>, Mode, Rng*,
                                            Gradients<float>&);
template StepLoss loss_and_gradients<double>(const Model<double>&, std::span<const LossTerm<double>>, Mode, Rng*,
                                             Gradients<double>&);
template StepLoss train_step<float>(Model<float>&, std::span<const LossTerm<float>>, AdamState<float>&, Rng&);
template StepLoss train_step<double>(Model<double>&, std::span<const LossTerm<double>>, AdamState<double>&, Rng&);
template class FrozenComposition<float>;
template class FrozenComposition<double>;

}  // namespace gamin::nn

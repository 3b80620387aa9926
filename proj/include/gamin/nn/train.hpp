#pragma once

#include <span>
#include <vector>

#include "gamin/nn/adam.hpp"
#include "gamin/nn/model.hpp"

namespace gamin::nn {

// One weighted cross-entropy term of a composite loss:
// weight * cross_entropy(targets, forward(inputs)).
template <typename T>
struct LossTerm {
  const BasicTensor<T>& inputs;
  const BasicTensor<T>& targets;
  double weight = 1.0;
};

struct StepLoss {
  double total = 0.0;             // sum of weight * term loss
  std::vector<double> terms;      // unweighted cross-entropy per term
};

// Evaluates the composite loss and accumulates its parameter gradients into
// `grads` (resized when empty). Each term gets its own forward pass in `mode`.
template <typename T>
StepLoss loss_and_gradients(const Model<T>& model, std::span<const LossTerm<T>> terms, Mode mode, Rng* rng,
                            Gradients<T>& grads);

// Train-mode forward/backward over all terms followed by one Adam step.
// Returns the pre-update loss. On a non-finite gradient the parameters and
// optimizer state are left untouched and NumericalError is thrown.
template <typename T>
StepLoss train_step(Model<T>& model, std::span<const LossTerm<T>> terms, AdamState<T>& adam, Rng& rng);

template <typename T>
StepLoss train_step(Model<T>& model, const BasicTensor<T>& inputs, const BasicTensor<T>& targets,
                    AdamState<T>& adam, Rng& rng) {
  const LossTerm<T> term{inputs, targets, 1.0};
  return train_step(model, std::span<const LossTerm<T>>(&term, 1), adam, rng);
}

// Generator feeding a frozen surrogate. Only the generator is ever updated;
// the surrogate is always evaluated in inference mode.
template <typename T>
class FrozenComposition {
 public:
  FrozenComposition(Model<T>& generator, const Model<T>& surrogate);

  // surrogate(generator(latent)), the generator running in `generator_mode`.
  BasicTensor<T> forward(const BasicTensor<T>& latent, Mode generator_mode = Mode::infer, Rng* rng = nullptr) const;

  // Cross-entropy of the composition against `targets` and its gradient with
  // respect to the generator parameters.
  double loss_and_gradients(const BasicTensor<T>& latent, const BasicTensor<T>& targets, Mode generator_mode,
                            Rng* rng, Gradients<T>& generator_grads) const;

  // One Adam step on the generator; returns the pre-update loss.
  double train_step(const BasicTensor<T>& latent, const BasicTensor<T>& targets, AdamState<T>& generator_adam,
                    Rng& rng);

  const Model<T>& generator() const { return generator_; }
  const Model<T>& surrogate() const { return surrogate_; }

 private:
  Model<T>& generator_;
  const Model<T>& surrogate_;
};

template <typename T>
FrozenComposition<T> compose_frozen(Model<T>& generator, const Model<T>& surrogate) {
  return FrozenComposition<T>(generator, surrogate);
}

}  // namespace gamin::nn

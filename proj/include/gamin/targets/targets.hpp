#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "gamin/data/dataset.hpp"
#include "gamin/nn/adam.hpp"
#include "gamin/nn/architecture.hpp"
#include "gamin/nn/model.hpp"

namespace gamin::targets {

enum class TargetName { soft, mlp1, mlp2, cnn1, cnn2 };

inline constexpr std::array<TargetName, 5> kAllTargets{TargetName::soft, TargetName::mlp1, TargetName::mlp2,
                                                       TargetName::cnn1, TargetName::cnn2};

std::string_view to_string(TargetName name);               // "Soft", "MLP1", ...
std::optional<TargetName> parse_target_name(std::string_view text);  // case-insensitive

// Flat input of `input_dim` values. Convolutional targets reshape it to a
// single-channel square image, so input_dim must be a perfect square for them.
nn::ArchitectureSpec build_target(TargetName name, std::size_t input_dim, std::size_t output_dim);

// Image input [channels, height, width]; dense targets flatten first.
nn::ArchitectureSpec build_target(TargetName name, const nn::Shape& image_shape, std::size_t output_dim);

enum class Optimizer { adam, sgd };

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  Optimizer optimizer = Optimizer::adam;
  nn::AdamSettings adam{};
  double sgd_learning_rate = 0.1;
  std::uint64_t seed = 0;
  // Called after every epoch with the epoch index and mean training loss.
  std::function<void(std::size_t, double)> on_epoch;
};

struct NoisySgdOptions {
  double clip_norm = 1.0;
  double noise_multiplier = 1.0;
  double learning_rate = 0.1;
  std::size_t epochs = 20;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  // Called for every example with the L2 norm of its contribution after clipping.
  std::function<void(double)> on_clipped;
  std::function<void(std::size_t, double)> on_epoch;
};

struct TrainReport {
  std::string model;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double acc_train = 0.0;
  double acc_test = 0.0;
  double wall_seconds = 0.0;
  // noisy-SGD runs only
  std::optional<double> clip_norm;
  std::optional<double> noise_multiplier;
  std::optional<std::size_t> steps;

  nlohmann::json to_json() const;
};

struct TrainedTarget {
  nn::Model<float> model;
  TrainReport report;
};

// Fraction of items whose argmax prediction equals the label.
double accuracy(const nn::Model<float>& model, const data::LabeledImageSet& set, std::size_t batch = 500);

// Mini-batch cross-entropy training from a fresh initialisation seeded by
// options.seed. Throws NumericalError when the loss diverges.
TrainedTarget train_target(const nn::ArchitectureSpec& spec, const std::string& name,
                           const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                           const TrainOptions& options);

// Noisy SGD: per-example gradients clipped to clip_norm in L2, summed, plus
// Gaussian noise of standard deviation noise_multiplier * clip_norm, averaged
// over the batch and applied by plain SGD.
TrainedTarget train_target_noisy(const nn::ArchitectureSpec& spec, const std::string& name,
                                 const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                                 const NoisySgdOptions& options);

}  // namespace gamin::targets

#include "gamin/targets/targets.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "gamin/nn/loss.hpp"
#include "gamin/nn/train.hpp"

namespace gamin::targets {

using nn::Activation;
using nn::LayerSpec;

namespace {

constexpr std::array<std::string_view, 5> kNames{"Soft", "MLP1", "MLP2", "CNN1", "CNN2"};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

// Layers after the input adapter. Convolutional rows use 2x2 kernels and 2x2 pooling.
std::vector<LayerSpec> body(TargetName name, std::size_t output_dim) {
  const LayerSpec out = LayerSpec::dense(output_dim, Activation::softmax);
  switch (name) {
    case TargetName::soft:
      return {out};
    case TargetName::mlp1:
      return {LayerSpec::dense(100, Activation::relu), out};
    case TargetName::mlp2:
      return {LayerSpec::dense(200, Activation::relu), LayerSpec::dense(200, Activation::relu), out};
    case TargetName::cnn1:
      return {LayerSpec::conv2d(32, 2, Activation::relu), LayerSpec::maxpool2d(2), LayerSpec::flatten(),
              LayerSpec::dense(200, Activation::relu), out};
    case TargetName::cnn2:
      return {LayerSpec::conv2d(32, 2, Activation::relu), LayerSpec::maxpool2d(2),
              LayerSpec::conv2d(64, 2, Activation::relu), LayerSpec::maxpool2d(2),
              LayerSpec::flatten(),
              LayerSpec::dense(200, Activation::relu), out};
  }
  return {};
}

bool is_convolutional(TargetName name) { return name == TargetName::cnn1 || name == TargetName::cnn2; }

void check_dataset(const nn::ArchitectureSpec& spec, const data::LabeledImageSet& set) {
  if (set.num_classes != spec.output_dim) {
    throw ShapeError(fmt::format("dataset has {} classes but the model outputs {}", set.num_classes, spec.output_dim));
  }
  if (set.images.row_size() != spec.input_size() && set.size() > 0) {
    throw ShapeError(fmt::format("dataset images hold {} values but the model expects {}", set.images.row_size(),
                                 spec.input_size()));
  }
}

nn::Tensor labels_one_hot(const data::LabeledImageSet& set, std::span<const std::size_t> idx, std::size_t classes) {
  nn::Tensor y({idx.size(), classes});
  for (std::size_t i = 0; i < idx.size(); ++i) y[i * classes + set.labels[idx[i]]] = 1.0f;
  return y;
}

// Shuffled mini-batch epochs; `step` receives the batch indices and returns its loss.
template <typename Step>
void run_epochs(std::size_t n, std::size_t epochs, std::size_t batch, std::uint64_t seed, Step&& step,
                const std::function<void(std::size_t, double)>& on_epoch) {
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (n == 0) throw ConfigError("training set is empty");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  nn::Rng shuffle(seed ^ 0x5851f42d4c957f2dULL);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, n - start));
      const double loss = step(idx);
      if (!std::isfinite(loss)) {
        throw NumericalError(fmt::format("training diverged: non-finite loss in epoch {}", epoch));
      }
      total += loss;
      ++batches;
    }
    if (on_epoch) on_epoch(epoch, total / static_cast<double>(batches));
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void finish_report(TrainedTarget& out, const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                   std::chrono::steady_clock::time_point start) {
  out.report.acc_train = accuracy(out.model, train);
  out.report.acc_test = test.size() > 0 ? accuracy(out.model, test) : 0.0;
  out.report.wall_seconds = seconds_since(start);
}

}  // namespace

std::string_view to_string(TargetName name) { return kNames[static_cast<std::size_t>(name)]; }

std::optional<TargetName> parse_target_name(std::string_view text) {
  for (TargetName name : kAllTargets) {
    if (iequals(text, to_string(name))) return name;
  }
  return std::nullopt;
}

nn::ArchitectureSpec build_target(TargetName name, std::size_t input_dim, std::size_t output_dim) {
  if (input_dim == 0 || output_dim == 0) throw ShapeError("target dimensions must be positive");
  nn::ArchitectureSpec spec;
  spec.input = {input_dim};
  spec.output_dim = output_dim;
  if (is_convolutional(name)) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
    if (side * side != input_dim) {
      throw ShapeError(fmt::format("{} needs a square single-channel input, {} is not a square", to_string(name),
                                   input_dim));
    }
    spec.layers.push_back(LayerSpec::reshape({1, side, side}));
  }
  for (LayerSpec& l : body(name, output_dim)) spec.layers.push_back(std::move(l));
  nn::layer_shapes(spec);
  return spec;
}

nn::ArchitectureSpec build_target(TargetName name, const nn::Shape& image_shape, std::size_t output_dim) {
  if (image_shape.size() != 3) throw ShapeError("image shape must be [channels, height, width]");
  nn::ArchitectureSpec spec;
  spec.input = image_shape;
  spec.output_dim = output_dim;
  if (!is_convolutional(name)) spec.layers.push_back(LayerSpec::flatten());
  for (LayerSpec& l : body(name, output_dim)) spec.layers.push_back(std::move(l));
  nn::layer_shapes(spec);
  return spec;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j{{"model", model},       {"seed", seed},         {"epochs", epochs},
                   {"acc_train", acc_train}, {"acc_test", acc_test}, {"wall_seconds", wall_seconds}};
  if (clip_norm) j["clip_norm"] = *clip_norm;
  if (noise_multiplier) j["noise_multiplier"] = *noise_multiplier;
  if (steps) j["steps"] = *steps;
  return j;
}

double accuracy(const nn::Model<float>& model, const data::LabeledImageSet& set, std::size_t batch) {
  if (set.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch) {
    const std::size_t count = std::min(batch, set.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const nn::Tensor out = nn::forward(model, nn::gather_rows(set.images, idx), nn::Mode::infer);
    for (std::size_t i = 0; i < count; ++i) {
      if (nn::argmax(out.row(i)) == set.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainedTarget train_target(const nn::ArchitectureSpec& spec, const std::string& name,
                           const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                           const TrainOptions& options) {
  check_dataset(spec, train);
  const auto start = std::chrono::steady_clock::now();
  TrainedTarget out{nn::make_model<float>(spec, options.seed), {}};
  nn::AdamState<float> adam = nn::make_adam(out.model.params, options.adam);
  nn::Rng dropout(options.seed + 1);
  run_epochs(
      train.size(), options.epochs, options.batch, options.seed,
      [&](std::span<const std::size_t> idx) {
        const nn::Tensor x = nn::gather_rows(train.images, idx);
        const nn::Tensor y = labels_one_hot(train, idx, spec.output_dim);
        if (options.optimizer == Optimizer::adam) return nn::train_step(out.model, x, y, adam, dropout).total;
        nn::ForwardTrace<float> trace;
        const nn::Tensor p = nn::forward(out.model, x, nn::Mode::train, &dropout, &trace);
        nn::Gradients<float> grads = nn::zero_gradients(out.model.params);
        nn::backward(out.model, trace, nn::cross_entropy_grad(y, p), &grads, false);
        nn::sgd_update(out.model.params, grads, options.sgd_learning_rate);
        return nn::cross_entropy(y, p);
      },
      options.on_epoch);
  out.report.model = name;
  out.report.seed = options.seed;
  out.report.epochs = options.epochs;
  finish_report(out, train, test, start);
  return out;
}

TrainedTarget train_target_noisy(const nn::ArchitectureSpec& spec, const std::string& name,
                                 const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                                 const NoisySgdOptions& options) {
  if (!(options.clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (!(options.noise_multiplier >= 0.0)) throw ConfigError("noise multiplier must be non-negative");
  for (const LayerSpec& layer : spec.layers) {
    if (layer.kind == nn::LayerKind::dropout) throw ConfigError("noisy SGD does not support dropout layers");
  }
  check_dataset(spec, train);
  const auto start = std::chrono::steady_clock::now();
  TrainedTarget out{nn::make_model<float>(spec, options.seed), {}};
  nn::Rng dropout(options.seed + 1);
  nn::Rng noise_rng(options.seed + 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::size_t steps = 0;

  run_epochs(
      train.size(), options.epochs, options.batch, options.seed,
      [&](std::span<const std::size_t> idx) {
        const nn::Tensor x = nn::gather_rows(train.images, idx);
        const nn::Tensor y = labels_one_hot(train, idx, spec.output_dim);
        nn::ForwardTrace<float> trace;
        const nn::Tensor p = nn::forward(out.model, x, nn::Mode::train, &dropout, &trace);
        nn::Tensor grad_out = nn::cross_entropy_grad(y, p);

        // The gradient is linear in grad_out, so scaling row i by c_i makes the
        // batched backward pass return (1/B) sum_i c_i g_i. Per-example norms come
        // from single-row backward passes over the same forward trace values.
        const std::size_t classes = spec.output_dim;
        const auto batch = static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
          nn::ForwardTrace<float> single;
          const std::array<std::size_t, 1> one{idx[i]};
          const nn::Tensor xi = nn::gather_rows(train.images, one);
          const nn::Tensor pi = nn::forward(out.model, xi, nn::Mode::infer, nullptr, &single);
          nn::Gradients<float> gi = nn::zero_gradients(out.model.params);
          nn::backward(out.model, single, nn::cross_entropy_grad(labels_one_hot(train, one, classes), pi), &gi, false);
          double sq = 0.0;
          for (const auto& layer : gi) {
            for (float v : layer.weights) sq += static_cast<double>(v) * v;
            for (float v : layer.bias) sq += static_cast<double>(v) * v;
          }
          const double norm = std::sqrt(sq);
          const double factor = norm > options.clip_norm ? options.clip_norm / norm : 1.0;
          if (factor != 1.0) {
            for (std::size_t j = 0; j < classes; ++j) grad_out[i * classes + j] *= static_cast<float>(factor);
          }
          if (options.on_clipped) options.on_clipped(norm * factor);
        }
        nn::Gradients<float> grads = nn::zero_gradients(out.model.params);
        nn::backward(out.model, trace, grad_out, &grads, false);
        if (options.noise_multiplier > 0.0) {
          const double sigma = options.noise_multiplier * options.clip_norm / batch;
          for (auto& layer : grads) {
            for (float& v : layer.weights) v = static_cast<float>(v + sigma * gauss(noise_rng));
            for (float& v : layer.bias) v = static_cast<float>(v + sigma * gauss(noise_rng));
          }
        }
        nn::sgd_update(out.model.params, grads, options.learning_rate);
        ++steps;
        return nn::cross_entropy(y, p);
      },
      options.on_epoch);

  out.report.model = name;
  out.report.seed = options.seed;
  out.report.epochs = options.epochs;
  out.report.clip_norm = options.clip_norm;
  out.report.noise_multiplier = options.noise_multiplier;
  out.report.steps = steps;
  finish_report(out, train, test, start);
  return out;
}

}  // namespace gamin::targets

#include <cmath>
#include <random>
#include <string>

#include "doctest.h"
#include "gamin/nn/adam.hpp"
#include "gamin/nn/loss.hpp"
#include "gamin/nn/model.hpp"
#include "gamin/nn/serialize.hpp"
#include "gamin/nn/train.hpp"
#include "support/gradcheck.hpp"

using namespace gamin;
using namespace gamin::nn;

namespace {

TensorD random_input(const ArchitectureSpec& spec, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Shape shape{batch};
  shape.insert(shape.end(), spec.input.begin(), spec.input.end());
  TensorD x(shape);
  for (double& v : x.values()) v = g(rng);
  return x;
}

// Biases are zero after init; give them values so their gradients are exercised.
template <typename T>
void jitter_biases(ModelParams<T>& params, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& layer : params.layers) {
    for (T& b : layer.bias) b = static_cast<T>(u(rng));
  }
}

ArchitectureSpec small_cnn() {
  ArchitectureSpec spec;
  spec.input = {2, 7, 7};
  spec.output_dim = 3;
  spec.layers = {LayerSpec::conv2d(3, 2, Activation::relu), LayerSpec::maxpool2d(2), LayerSpec::flatten(),
                 LayerSpec::dense(5, Activation::tanh), LayerSpec::dropout(0.3),
                 LayerSpec::dense(3, Activation::softmax)};
  return spec;
}

}  // namespace

TEST_CASE("dense identity layer passes its input through") {
  ArchitectureSpec spec{{3}, 3, {LayerSpec::dense(3, Activation::identity)}};
  Model<float> model = make_model<float>(spec, 1);
  model.params.layers[0].weights = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  model.params.layers[0].bias = {0, 0, 0};
  const Tensor x({2, 3}, {0.5f, -1.0f, 2.0f, 3.0f, 0.25f, -7.0f});
  CHECK(forward(model, x, Mode::infer) == x);
}

TEST_CASE("softmax rows are probability vectors and tanh stays in range") {
  ArchitectureSpec spec{{6}, 4, {LayerSpec::dense(8, Activation::tanh), LayerSpec::dense(4, Activation::softmax)}};
  Model<float> model = make_model<float>(spec, 7);
  Rng rng(3);
  std::normal_distribution<float> g(0.0f, 20.0f);
  Tensor x({16, 6});
  for (float& v : x.values()) v = g(rng);
  ForwardTrace<float> trace;
  const Tensor y = forward(model, x, Mode::infer, nullptr, &trace);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double total = 0;
    for (float p : y.row(r)) {
      CHECK(p >= 0.0f);
      total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  for (float v : trace.activations[1].values()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("2x2 max pooling picks the window maximum") {
  ArchitectureSpec spec{{1, 2, 2}, 1, {LayerSpec::maxpool2d(2), LayerSpec::flatten()}};
  Model<float> model = make_model<float>(spec, 0);
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(forward(model, x, Mode::infer)[0] == 4.0f);
}

TEST_CASE("dropout is the identity in inference mode and inverted-scaled in training") {
  ArchitectureSpec spec{{1000}, 1000, {LayerSpec::dropout(0.5)}};
  Model<float> model = make_model<float>(spec, 0);
  Tensor x({1, 1000}, 1.0f);
  CHECK(forward(model, x, Mode::infer) == x);
  Rng rng(11);
  const Tensor y = forward(model, x, Mode::train, &rng);
  std::size_t kept = 0;
  for (float v : y.values()) {
    CHECK((v == 0.0f || v == 2.0f));
    kept += v != 0.0f;
  }
  CHECK(kept > 400);
  CHECK(kept < 600);
}

TEST_CASE("shape mismatches name the offending layer") {
  ArchitectureSpec bad{{1, 5, 5}, 4, {LayerSpec::conv2d(2, 3, Activation::relu), LayerSpec::maxpool2d(4)}};
  try {
    layer_shapes(bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("layer 1 (maxpool2d)") != std::string::npos);
  }
  ArchitectureSpec spec{{4}, 2, {LayerSpec::dense(2, Activation::softmax)}};
  Model<float> model = make_model<float>(spec, 0);
  CHECK_THROWS_AS(forward(model, Tensor({3, 5}), Mode::infer), ShapeError);
  ArchitectureSpec wrong_out{{4}, 3, {LayerSpec::dense(2, Activation::softmax)}};
  CHECK_THROWS_AS(layer_shapes(wrong_out), ShapeError);
  ArchitectureSpec bad_drop{{4}, 4, {LayerSpec::dropout(1.0)}};
  CHECK_THROWS_AS(layer_shapes(bad_drop), ShapeError);
}

TEST_CASE("cross-entropy hand-evaluated values") {
  const double ln2 = std::log(2.0);
  CHECK(cross_entropy(TensorD({1, 2}, {1, 0}), TensorD({1, 2}, {0.5, 0.5})) == doctest::Approx(ln2).epsilon(1e-12));
  CHECK(cross_entropy(TensorD({1, 2}, {0.5, 0.5}), TensorD({1, 2}, {0.5, 0.5})) ==
        doctest::Approx(ln2).epsilon(1e-12));
  TensorD onehot({1, 5}, 0.0);
  onehot[3] = 1.0;
  CHECK(cross_entropy(onehot, onehot) == 0.0);
  // mean over the batch
  const TensorD y({2, 2}, {1, 0, 0, 1});
  const TensorD p({2, 2}, {0.5, 0.5, 0.25, 0.75});
  CHECK(cross_entropy(y, p) == doctest::Approx((ln2 - std::log(0.75)) / 2).epsilon(1e-12));
  // the clamp keeps saturated predictions finite
  CHECK(cross_entropy(TensorD({1, 2}, {1, 0}), TensorD({1, 2}, {0, 1})) == doctest::Approx(-std::log(1e-7)));
  CHECK_THROWS_AS(cross_entropy(TensorD({1, 2}), TensorD({1, 3})), ShapeError);
}

TEST_CASE("mean absolute error hand-evaluated values") {
  CHECK(mean_absolute_error(TensorD({1, 2}, {0, 1}), TensorD({1, 2}, {0, 1})) == 0.0);
  CHECK(mean_absolute_error(TensorD({1, 2}, {0, 1}), TensorD({1, 2}, {1, 0})) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean_absolute_error(TensorD({1, 2}, {0.2, 0.8}), TensorD({1, 2}, {0.4, 0.8})) ==
        doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(mean_absolute_error(TensorD({2}), TensorD({3})), ShapeError);
}

TEST_CASE("Adam: zero gradient from a fresh state leaves parameters unchanged") {
  ArchitectureSpec spec{{3}, 2, {LayerSpec::dense(2, Activation::softmax)}};
  Model<double> model = make_model<double>(spec, 5);
  const auto before = model.params;
  AdamState<double> adam = make_adam(model.params, {});
  adam_update(model.params, zero_gradients(model.params), adam);
  CHECK(model.params == before);
  CHECK(adam.step == 1);
}

TEST_CASE("Adam: first bias-corrected step moves a scalar by about the learning rate") {
  ArchitectureSpec spec{{1}, 1, {LayerSpec::dense(1, Activation::identity)}};
  Model<double> model = make_model<double>(spec, 5);
  model.params.layers[0].weights = {0.5};
  AdamState<double> adam = make_adam(model.params, {0.01, 0.99, 0.99, 1e-8});
  Gradients<double> g = zero_gradients(model.params);
  g[0].weights[0] = -3.0;
  adam_update(model.params, g, adam);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
  const double first = model.params.layers[0].weights[0];
  CHECK(first - 0.5 == doctest::Approx(0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
  CHECK(model.params.layers[0].bias[0] == 0.0);

  // second step follows the recurrence exactly
  adam_update(model.params, g, adam);
  const double m = 0.99 * (0.01 * -3.0) + 0.01 * -3.0;
  const double v = 0.99 * (0.01 * 9.0) + 0.01 * 9.0;
  const double step = 0.01 * (m / (1 - 0.99 * 0.99)) / (std::sqrt(v / (1 - 0.99 * 0.99)) + 1e-8);
  CHECK(model.params.layers[0].weights[0] == doctest::Approx(first - step).epsilon(1e-12));
  CHECK(adam.first_moment[0].weights[0] == doctest::Approx(m).epsilon(1e-12));
  CHECK(adam.second_moment[0].weights[0] == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("non-finite gradients abort the step and name the layer") {
  ArchitectureSpec spec{{2}, 2, {LayerSpec::dense(3, Activation::relu), LayerSpec::dense(2, Activation::softmax)}};
  Model<float> model = make_model<float>(spec, 1);
  const auto before = model.params;
  AdamState<float> adam = make_adam(model.params, {});
  Gradients<float> g = zero_gradients(model.params);
  g[1].weights[2] = std::nanf("");
  try {
    adam_update(model.params, g, adam);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  CHECK(model.params == before);
  CHECK(adam.step == 0);
}

TEST_CASE("analytic gradients match central finite differences for every layer kind") {
  const std::vector<std::pair<const char*, ArchitectureSpec>> cases = {
      {"dense+softmax", {{5}, 4, {LayerSpec::dense(4, Activation::softmax)}}},
      {"dense relu/tanh", {{6}, 3, {LayerSpec::dense(7, Activation::relu), LayerSpec::dense(3, Activation::tanh)}}},
      {"conv2d", {{2, 5, 5}, 3 * 3 * 3, {LayerSpec::conv2d(3, 3, Activation::tanh), LayerSpec::flatten()}}},
      {"maxpool2d", {{2, 6, 6}, 18, {LayerSpec::maxpool2d(2), LayerSpec::flatten()}}},
      {"dropout", {{8}, 8, {LayerSpec::dense(8, Activation::tanh), LayerSpec::dropout(0.4)}}},
      {"reshape/flatten",
       {{12}, 4, {LayerSpec::reshape({3, 2, 2}), LayerSpec::flatten(), LayerSpec::dense(4, Activation::softmax)}}},
      {"small cnn", small_cnn()},
  };
  for (const auto& [label, spec] : cases) {
    const std::string name = label;
    CAPTURE(name);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Model<double> model = make_model<double>(spec, 100 + seed);
      jitter_biases(model.params, seed);
      const auto result = testing::check_gradients(model, random_input(spec, 3, seed), seed, 25);
      CHECK(result.checked > 0);
      CHECK(result.skipped * 10 <= result.checked + result.skipped);
      CHECK(result.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("composite weighted loss gradient matches finite differences") {
  ArchitectureSpec spec{{4}, 3, {LayerSpec::dense(5, Activation::relu), LayerSpec::dense(3, Activation::softmax)}};
  Model<double> model = make_model<double>(spec, 3);
  const TensorD xa = random_input(spec, 4, 1), xb = random_input(spec, 4, 2);
  TensorD ya({4, 3}, 0.0), yb({4, 3}, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    ya[r * 3 + r % 3] = 1.0;
    yb[r * 3 + (r + 1) % 3] = 0.7;
    yb[r * 3 + (r + 2) % 3] = 0.3;
  }
  const double k = 0.37;
  const std::vector<LossTerm<double>> terms{{xa, ya, 1.0}, {xb, yb, -k}};
  Gradients<double> grads;
  const StepLoss loss = loss_and_gradients<double>(model, terms, Mode::infer, nullptr, grads);
  CHECK(loss.total == doctest::Approx(loss.terms[0] - k * loss.terms[1]).epsilon(1e-12));
  auto value = [&] {
    return cross_entropy(ya, forward(model, xa, Mode::infer)) - k * cross_entropy(yb, forward(model, xb, Mode::infer));
  };
  for (std::size_t layer : {0u, 1u}) {
    for (std::size_t j = 0; j < model.params.layers[layer].weights.size(); j += 3) {
      const auto numeric = testing::numeric_partial(model.params.layers[layer].weights[j], value);
      if (numeric) CHECK(testing::relative_error(grads[layer].weights[j], *numeric) < 1e-4);
    }
  }
}

TEST_CASE("frozen composition") {
  ArchitectureSpec gen_spec{{3}, 8, {LayerSpec::dense(6, Activation::relu), LayerSpec::dropout(0.25),
                                     LayerSpec::dense(8, Activation::tanh)}};
  ArchitectureSpec sur_spec{{8}, 4, {LayerSpec::dense(5, Activation::relu), LayerSpec::dropout(0.5),
                                     LayerSpec::dense(4, Activation::softmax)}};

  SUBCASE("training touches only the generator") {
    Model<float> gen = make_model<float>(gen_spec, 1);
    Model<float> sur = make_model<float>(sur_spec, 2);
    const auto sur_before = sur.params;
    const auto gen_before = gen.params;
    auto combined = compose_frozen(gen, sur);
    AdamState<float> adam = make_adam(gen.params, {0.01, 0.9, 0.999, 1e-8});
    Rng rng(4);
    Tensor z({8, 3});
    std::normal_distribution<float> g;
    for (float& v : z.values()) v = g(rng);
    Tensor y({8, 4}, 0.0f);
    for (std::size_t r = 0; r < 8; ++r) y[r * 4 + 2] = 1.0f;
    combined.train_step(z, y, adam, rng);
    CHECK(sur.params == sur_before);
    CHECK_FALSE(gen.params == gen_before);
  }

  SUBCASE("forward equals surrogate(generator(z))") {
    Model<float> gen = make_model<float>(gen_spec, 1);
    Model<float> sur = make_model<float>(sur_spec, 2);
    auto combined = compose_frozen(gen, sur);
    Tensor z({5, 3});
    Rng rng(9);
    std::normal_distribution<float> g;
    for (float& v : z.values()) v = g(rng);
    CHECK(combined.forward(z) == forward(sur, forward(gen, z, Mode::infer), Mode::infer));
  }

  SUBCASE("generator gradient through the frozen surrogate matches finite differences") {
    Model<double> gen = make_model<double>(gen_spec, 1);
    Model<double> sur = make_model<double>(sur_spec, 2);
    jitter_biases(gen.params, 3);
    jitter_biases(sur.params, 4);
    auto combined = compose_frozen(gen, sur);
    TensorD z({4, 3});
    Rng rng(9);
    std::normal_distribution<double> g;
    for (double& v : z.values()) v = g(rng);
    TensorD y({4, 4}, 0.0);
    for (std::size_t r = 0; r < 4; ++r) y[r * 4 + 1] = 1.0;
    Gradients<double> grads;
    Rng drop(21);
    combined.loss_and_gradients(z, y, Mode::train, &drop, grads);
    auto value = [&] {
      Rng d(21);
      return cross_entropy(y, combined.forward(z, Mode::train, &d));
    };
    for (std::size_t layer : {0u, 2u}) {
      auto& weights = gen.params.layers[layer].weights;
      for (std::size_t j = 0; j < weights.size(); ++j) {
        const auto numeric = testing::numeric_partial(weights[j], value);
        if (numeric) CHECK(testing::relative_error(grads[layer].weights[j], *numeric) < 1e-4);
      }
    }
  }

  SUBCASE("dimension mismatch is rejected") {
    Model<float> gen = make_model<float>(gen_spec, 1);
    Model<float> other = make_model<float>(ArchitectureSpec{{7}, 2, {LayerSpec::dense(2, Activation::softmax)}}, 2);
    CHECK_THROWS_AS(compose_frozen(gen, other), ShapeError);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    Model<float> model = make_model<float>(small_cnn(), 42);
    AdamState<float> adam = make_adam(model.params, {});
    Rng rng(7);
    std::normal_distribution<float> g;
    for (int step = 0; step < 5; ++step) {
      Tensor x({4, 2, 7, 7});
      for (float& v : x.values()) v = g(rng);
      Tensor y({4, 3}, 0.0f);
      for (std::size_t r = 0; r < 4; ++r) y[r * 3 + (r + step) % 3] = 1.0f;
      train_step(model, x, y, adam, rng);
    }
    return model.params;
  };
  CHECK(run() == run());
}

TEST_CASE("model container") {
  Model<float> model = make_model<float>(small_cnn(), 9);
  jitter_biases(model.params, 1);

  SUBCASE("round trip is bit-exact and byte-stable") {
    const std::string bytes = serialize(model.spec, model.params);
    CHECK(bytes.rfind("GAMINMDL1\n", 0) == 0);
    const Model<float> back = deserialize(bytes);
    CHECK(back.spec == model.spec);
    CHECK(back.params == model.params);
    CHECK(serialize(back.spec, back.params) == bytes);
  }
  SUBCASE("empty stream is rejected") { CHECK_THROWS_AS(deserialize(""), FormatError); }
  SUBCASE("mutated magic names the expected magic") {
    std::string bytes = serialize(model.spec, model.params);
    bytes[5] = 'X';
    try {
      deserialize(bytes);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("GAMINMDL1") != std::string::npos);
    }
  }
  SUBCASE("truncated payload reports a byte offset") {
    std::string bytes = serialize(model.spec, model.params);
    bytes.resize(bytes.size() - 3);
    try {
      deserialize(bytes);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() > 0);
      CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }
  }
  SUBCASE("corrupted header line is rejected") {
    std::string bytes = serialize(model.spec, model.params);
    const auto at = bytes.find("conv2d");
    bytes.replace(at, 6, "convXd");
    CHECK_THROWS_AS(deserialize(bytes), FormatError);
  }
}

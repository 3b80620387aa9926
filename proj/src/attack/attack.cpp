#include "gamin/attack/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "gamin/nn/loss.hpp"
#include "gamin/nn/train.hpp"

namespace gamin::attack {

using nn::Activation;
using nn::LayerSpec;

namespace {

std::size_t square_side(std::size_t input_dim, const char* who) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
  if (side * side != input_dim) {
    throw ShapeError(fmt::format("{} needs a square single-channel input, {} is not a square", who, input_dim));
  }
  return side;
}

nn::Tensor normal_tensor(nn::Shape shape, nn::Rng& rng) {
  nn::Tensor t(std::move(shape));
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (float& v : t.values()) v = g(rng);
  return t;
}

double label_fraction(const nn::Tensor& predictions, std::uint32_t label) {
  if (predictions.rows() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.rows(); ++i) {
    if (nn::argmax(predictions.row(i)) == label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.rows());
}

}  // namespace

nn::ArchitectureSpec surrogate_spec(std::size_t input_dim, std::size_t num_classes) {
  const std::size_t side = square_side(input_dim, "surrogate");
  nn::ArchitectureSpec spec;
  spec.input = {input_dim};
  spec.output_dim = num_classes;
  spec.layers = {LayerSpec::reshape({1, side, side}),
                 LayerSpec::conv2d(32, 3, Activation::relu),
                 LayerSpec::maxpool2d(2),
                 LayerSpec::conv2d(64, 3, Activation::relu),
                 LayerSpec::maxpool2d(2),
                 LayerSpec::flatten(),
                 LayerSpec::dense(128, Activation::relu),
                 LayerSpec::dropout(0.5),
                 LayerSpec::dense(32, Activation::relu),
                 LayerSpec::dropout(0.5),
                 LayerSpec::dense(num_classes, Activation::softmax)};
  nn::layer_shapes(spec);
  return spec;
}

nn::ArchitectureSpec generator_spec(std::size_t latent_dim, std::size_t input_dim) {
  const std::size_t side = square_side(input_dim, "generator");
  nn::ArchitectureSpec spec;
  spec.input = {latent_dim};
  spec.output_dim = input_dim;
  spec.layers = {LayerSpec::dense(input_dim, Activation::relu),
                 LayerSpec::reshape({1, side, side}),
                 LayerSpec::conv2d(128, 3, Activation::relu),
                 LayerSpec::maxpool2d(2),
                 LayerSpec::dropout(0.5),
                 LayerSpec::conv2d(128, 3, Activation::relu),
                 LayerSpec::maxpool2d(2),
                 LayerSpec::dropout(0.5),
                 LayerSpec::conv2d(64, 3, Activation::relu),
                 LayerSpec::maxpool2d(2),
                 LayerSpec::flatten(),
                 LayerSpec::dense(input_dim, Activation::tanh)};
  nn::layer_shapes(spec);
  return spec;
}

double surrogate_loss(double lnoise, double lgen, double k) { return lnoise - k * lgen; }

double update_k(double k, double lambda_k, double gamma_k, double lnoise, double lgen, bool clamp) {
  const double next = k + lambda_k * (gamma_k * lnoise - lgen);
  return clamp ? std::clamp(next, 0.0, 1.0) : next;
}

double m_global(double lnoise, double lgen, double gamma_k) { return lnoise + std::abs(gamma_k * lnoise - lgen); }

double fidelity(const nn::Tensor& surrogate_predictions, const nn::Tensor& target_predictions) {
  return 1.0 - nn::mean_absolute_error(target_predictions, surrogate_predictions);
}

double fidelity(const nn::TensorD& surrogate_predictions, const nn::TensorD& target_predictions) {
  return 1.0 - nn::mean_absolute_error(target_predictions, surrogate_predictions);
}

double combined_accuracy(const nn::Model<float>& generator, const nn::Model<float>& surrogate, std::uint32_t label,
                         std::size_t probes, std::uint64_t seed) {
  if (probes == 0) throw ConfigError("combined accuracy needs at least one probe");
  nn::Rng rng(seed);
  std::size_t hits = 0;
  constexpr std::size_t kChunk = 250;
  for (std::size_t start = 0; start < probes; start += kChunk) {
    const std::size_t n = std::min(kChunk, probes - start);
    const nn::Tensor z = normal_tensor({n, generator.spec.input_size()}, rng);
    const nn::Tensor p = nn::forward(surrogate, nn::forward(generator, z, nn::Mode::infer), nn::Mode::infer);
    hits += static_cast<std::size_t>(std::llround(label_fraction(p, label) * static_cast<double>(n)));
  }
  return static_cast<double>(hits) / static_cast<double>(probes);
}

void AttackConfig::validate() const {
  if (!(gamma_k > 0.0 && gamma_k <= 1.0)) throw ConfigError(fmt::format("gamma_k = {} outside (0, 1]", gamma_k));
  if (!(lambda_k > 0.0)) throw ConfigError(fmt::format("lambda_k = {} must be positive", lambda_k));
  if (batch == 0) throw ConfigError("batch size must be at least 1");
  if (latent_dim == 0) throw ConfigError("latent dimension must be at least 1");
  if (report_probes == 0) throw ConfigError("report_probes must be at least 1");
  for (const auto* adam : {&surrogate_adam, &generator_adam}) {
    if (!(adam->learning_rate > 0.0) || !(adam->beta1 >= 0.0 && adam->beta1 < 1.0) ||
        !(adam->beta2 >= 0.0 && adam->beta2 < 1.0) || !(adam->epsilon > 0.0)) {
      throw ConfigError("Adam settings out of range");
    }
  }
}

nlohmann::json AttackConfig::to_json() const {
  auto adam = [](const nn::AdamSettings& a) {
    return nlohmann::json{{"lr", a.learning_rate}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"epsilon", a.epsilon}};
  };
  return {{"k0", k0},
          {"lambda_k", lambda_k},
          {"gamma_k", gamma_k},
          {"clamp_k", clamp_k},
          {"surrogate_adam", adam(surrogate_adam)},
          {"generator_adam", adam(generator_adam)},
          {"batch", batch},
          {"latent_dim", latent_dim},
          {"budget", budget},
          {"max_steps", max_steps},
          {"fidelity_probe", fidelity_probe == FidelityProbe::step_noise ? "step_noise" : "uniform"},
          {"report_probes", report_probes},
          {"seed", seed}};
}

nlohmann::json AttackReport::to_json() const {
  return {{"label", label},
          {"queries", queries},
          {"steps", steps},
          {"termination", termination},
          {"final_fidelity", final_fidelity},
          {"final_combined_accuracy", final_combined_accuracy},
          {"best_fidelity", best_fidelity},
          {"best_combined_accuracy", best_combined_accuracy},
          {"best_m_global", best_m_global},
          {"best_step", best_step},
          {"wall_seconds", wall_seconds}};
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,Lnoise,Lgen,k,m_global,fidelity,combined_accuracy\n";
  for (const HistoryRow& r : history) {
    out << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.step, r.lnoise, r.lgen, r.k, r.m_global,
                       r.fidelity, r.combined_accuracy);
  }
}

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,Lnoise,Lgen,k,m_global,fidelity,combined_accuracy") {
    throw FormatError("unexpected history header in " + path.string(), 0);
  }
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    HistoryRow r;
    if (!(fields >> r.step >> r.lnoise >> r.lgen >> r.k >> r.m_global >> r.fidelity >> r.combined_accuracy)) {
      throw FormatError("malformed history row in " + path.string(), static_cast<std::size_t>(in.tellg()));
    }
    rows.push_back(r);
  }
  return rows;
}

AttackReport gamin_attack(oracle::Oracle& oracle, std::uint32_t label, const AttackConfig& config,
                          const StepCallback& on_step) {
  config.validate();
  const std::size_t classes = oracle.num_classes();
  const std::size_t dim = oracle.input_dim();
  if (label >= classes) throw ConfigError(fmt::format("label {} outside the oracle's {} classes", label, classes));
  const std::size_t batch = config.batch;
  const std::uint64_t per_step = (config.fidelity_probe == FidelityProbe::uniform ? 3 : 2) * batch;
  if (oracle.remaining() < per_step) {
    throw ConfigError(fmt::format("budget of {} cannot pay for one step ({} queries)", oracle.remaining(), per_step));
  }
  const auto started = std::chrono::steady_clock::now();

  nn::Rng rng(config.seed);
  nn::Model<float> surrogate = nn::make_model<float>(surrogate_spec(dim, classes), config.seed * 2 + 1);
  nn::Model<float> generator = nn::make_model<float>(generator_spec(config.latent_dim, dim), config.seed * 2 + 2);
  nn::AdamState<float> surrogate_adam = nn::make_adam(surrogate.params, config.surrogate_adam);
  nn::AdamState<float> generator_adam = nn::make_adam(generator.params, config.generator_adam);
  auto combined = nn::compose_frozen(generator, surrogate);

  nn::Tensor target_class({batch, classes});
  for (std::size_t r = 0; r < batch; ++r) target_class[r * classes + label] = 1.0f;

  AttackReport report;
  report.label = label;
  report.termination = "budget";
  double k = config.k0;
  bool have_best = false;
  const std::uint64_t queries_before = oracle.consumed();

  while (oracle.remaining() >= per_step) {
    if (config.max_steps != 0 && report.steps >= config.max_steps) {
      report.termination = "max_steps";
      break;
    }
    const std::size_t step = report.steps;

    // generate artificial inputs from noise and query the target
    const nn::Tensor x_gen = nn::forward(generator, normal_tensor({batch, config.latent_dim}, rng), nn::Mode::infer);
    const nn::Tensor x_noise = normal_tensor({batch, dim}, rng);
    nn::Tensor y_gen, y_noise;
    try {
      y_gen = oracle.query(x_gen);
      y_noise = oracle.query(x_noise);
    } catch (const oracle::BudgetExhausted&) {
      report.termination = "budget";
      break;
    }

    // step metrics on the networks as they stand before this step's updates
    const nn::Tensor p_gen = nn::forward(surrogate, x_gen, nn::Mode::infer);
    const nn::Tensor p_noise = nn::forward(surrogate, x_noise, nn::Mode::infer);
    HistoryRow row;
    row.step = step;
    row.lgen = nn::cross_entropy(y_gen, p_gen);
    row.lnoise = nn::cross_entropy(y_noise, p_noise);
    row.k = k;
    row.m_global = m_global(row.lnoise, row.lgen, config.gamma_k);
    row.combined_accuracy = label_fraction(p_gen, label);
    if (config.fidelity_probe == FidelityProbe::uniform) {
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      nn::Tensor probe({batch, dim});
      for (float& v : probe.values()) v = u(rng);
      row.fidelity = fidelity(nn::forward(surrogate, probe, nn::Mode::infer), oracle.query(probe));
    } else {
      row.fidelity = fidelity(p_noise, y_noise);
    }
    if (!std::isfinite(row.lgen) || !std::isfinite(row.lnoise)) {
      throw NumericalError(fmt::format("non-finite loss at step {}: Lnoise={} Lgen={} k={} best M_global={}", step,
                                       row.lnoise, row.lgen, k, report.best_m_global));
    }

    if (!have_best || row.m_global < report.best_m_global) {
      have_best = true;
      report.best_m_global = row.m_global;
      report.best_step = step;
      report.best_fidelity = row.fidelity;
      report.best_generator = generator;
      report.best_surrogate = surrogate;
      report.best_batches = {x_gen, y_gen, x_noise, y_noise};
    }

    // boundary-equilibrium surrogate update
    const std::array<nn::LossTerm<float>, 2> terms{nn::LossTerm<float>{x_noise, y_noise, 1.0},
                                                   nn::LossTerm<float>{x_gen, y_gen, -k}};
    try {
      nn::train_step<float>(surrogate, terms, surrogate_adam, rng);
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("surrogate update failed at step {} (k={}, Lnoise={}, Lgen={}): {}", step, k,
                                       row.lnoise, row.lgen, e.what()));
    }
    k = update_k(k, config.lambda_k, config.gamma_k, row.lnoise, row.lgen, config.clamp_k);

    // generator update through the frozen surrogate, fresh latent batch
    try {
      combined.train_step(normal_tensor({batch, config.latent_dim}, rng), target_class, generator_adam, rng);
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("generator update failed at step {} (k={}): {}", step, k, e.what()));
    }

    report.history.push_back(row);
    ++report.steps;
    if (on_step && !on_step(row)) {
      report.termination = "callback";
      break;
    }
  }

  report.queries = oracle.consumed() - queries_before;
  report.final_generator = generator;
  report.final_surrogate = surrogate;
  if (!report.history.empty()) report.final_fidelity = report.history.back().fidelity;
  report.final_combined_accuracy =
      combined_accuracy(generator, surrogate, label, config.report_probes, config.seed + 0x51);
  if (have_best) {
    report.best_combined_accuracy = combined_accuracy(report.best_generator, report.best_surrogate, label,
                                                      config.report_probes, config.seed + 0x51);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace gamin::attack

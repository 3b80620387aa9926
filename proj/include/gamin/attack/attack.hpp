#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gamin/nn/adam.hpp"
#include "gamin/nn/model.hpp"
#include "gamin/oracle/oracle.hpp"

namespace gamin::attack {

// Attacker-side networks. Both take the target's flat input of `input_dim`
// values, which must be a square single-channel image.
nn::ArchitectureSpec surrogate_spec(std::size_t input_dim, std::size_t num_classes);
nn::ArchitectureSpec generator_spec(std::size_t latent_dim, std::size_t input_dim);

// L_S = Lnoise - k * Lgen
double surrogate_loss(double lnoise, double lgen, double k);
// k + lambda * (gamma * Lnoise - Lgen), clamped to [0, 1] when `clamp` is set
double update_k(double k, double lambda_k, double gamma_k, double lnoise, double lgen, bool clamp = true);
// Lnoise + |gamma * Lnoise - Lgen|
double m_global(double lnoise, double lgen, double gamma_k);
// 1 - mean absolute error; throws ShapeError on shape mismatch
double fidelity(const nn::Tensor& surrogate_predictions, const nn::Tensor& target_predictions);
double fidelity(const nn::TensorD& surrogate_predictions, const nn::TensorD& target_predictions);
// Fraction of `probes` latent draws z ~ N(0, 1) with argmax S(G(z)) == label.
// Both networks run in inference mode; no oracle access.
double combined_accuracy(const nn::Model<float>& generator, const nn::Model<float>& surrogate, std::uint32_t label,
                         std::size_t probes, std::uint64_t seed);

enum class FidelityProbe {
  step_noise,  // reuse the step's (X_S, Y_S): no extra queries
  uniform,     // one extra batch of U(-1, 1) noise per step, charged to the budget
};

struct AttackConfig {
  double k0 = 0.001;
  double lambda_k = 0.01;
  double gamma_k = 0.5;
  bool clamp_k = true;
  nn::AdamSettings surrogate_adam{1e-5, 0.99, 0.99, 1e-8};
  nn::AdamSettings generator_adam{1e-5, 0.99, 0.99, 1e-8};
  std::size_t batch = 64;
  std::size_t latent_dim = 10;
  std::uint64_t budget = 1'280'000;  // informational; the oracle holds the ledger
  std::size_t max_steps = 0;         // 0: until the budget runs out
  FidelityProbe fidelity_probe = FidelityProbe::step_noise;
  std::size_t report_probes = 1000;  // latent draws for the reported combined accuracy
  std::uint64_t seed = 0;

  // Throws ConfigError when an invariant is violated.
  void validate() const;
  nlohmann::json to_json() const;
};

struct HistoryRow {
  std::size_t step = 0;
  double lnoise = 0.0;
  double lgen = 0.0;
  double k = 0.0;  // value used for this step's surrogate update
  double m_global = 0.0;
  double fidelity = 0.0;
  double combined_accuracy = 0.0;  // on this step's generated batch
};

// The step's oracle-labelled batches, kept for the best checkpoint so the
// recorded score can be recomputed from the snapshot.
struct StepBatches {
  nn::Tensor x_gen, y_gen, x_noise, y_noise;
};

struct AttackReport {
  std::uint32_t label = 0;
  std::uint64_t queries = 0;
  std::size_t steps = 0;
  std::string termination;  // "budget", "max_steps" or "callback"
  double final_fidelity = 0.0;
  double final_combined_accuracy = 0.0;
  double best_fidelity = 0.0;
  double best_combined_accuracy = 0.0;
  double best_m_global = 0.0;
  std::size_t best_step = 0;
  double wall_seconds = 0.0;
  std::vector<HistoryRow> history;
  nn::Model<float> best_generator;
  nn::Model<float> best_surrogate;
  nn::Model<float> final_generator;
  nn::Model<float> final_surrogate;
  StepBatches best_batches;

  nlohmann::json to_json() const;  // scalars only
};

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);
std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);

// Called after every step; returning false stops the attack early.
using StepCallback = std::function<bool(const HistoryRow&)>;

// The attack loop. Each step queries the oracle with one generated and one noise
// batch. The networks are evaluated for the step's metrics before they are
// updated, and that pre-update pair is what the best checkpoint stores.
// Throws NumericalError (with a state summary) on non-finite losses.
AttackReport gamin_attack(oracle::Oracle& oracle, std::uint32_t label, const AttackConfig& config,
                          const StepCallback& on_step = {});

}  // namespace gamin::attack

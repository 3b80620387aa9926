#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gamin/attack/attack.hpp"
#include "gamin/data/dataset.hpp"
#include "gamin/targets/targets.hpp"

namespace gamin::eval {

inline constexpr double kJudgeAccuracyGate = 0.97;

struct JudgeOptions {
  std::size_t epochs = 2;
  double holdout_fraction = 0.1;  // train images the judge never sees, chosen by seed
  double accuracy_gate = kJudgeAccuracyGate;
  std::uint64_t seed = 0;
};

// A CNN2 classifier trained on its own seeded split of `train`. Throws
// ConfigError for single-class data and Error when the test accuracy misses
// the gate.
targets::TrainedTarget train_judge(const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                                   const JudgeOptions& options);

// Affine stretch of an image to [-1, 1]; a constant image maps to zeros.
nn::Tensor normalize_for_judge(const nn::Tensor& image);

struct JudgeVerdict {
  std::uint32_t label = 0;
  std::uint32_t predicted = 0;
  double confidence = 0.0;             // probability of the predicted class
  double true_class_confidence = 0.0;  // probability of `label`
  bool correct = false;
};

// `image` holds the judge's input size; it is stretched with
// normalize_for_judge before classification.
JudgeVerdict judge_reconstruction(const nn::Model<float>& judge, const nn::Tensor& image, std::uint32_t label);

struct AttackSummary {
  std::uint32_t label = 0;
  double fidelity = 0.0;
  double combined_accuracy = 0.0;
  double m_global = 0.0;
};

// Metrics of the best checkpoint.
AttackSummary summarize(const attack::AttackReport& report);

struct ReportRow {
  std::uint32_t label = 0;
  std::optional<AttackSummary> attack;
  std::optional<JudgeVerdict> verdict;
};

struct EvalReport {
  std::string model;
  std::vector<ReportRow> rows;  // ascending label
  std::vector<std::uint32_t> missing;
  std::optional<double> mean_fidelity, mean_combined_accuracy, mean_m_global, judge_correct_fraction;
  std::size_t majority_count = 0;  // verdicts with true-class confidence >= 0.5

  void write_csv(const std::filesystem::path& path) const;
  std::string text_table() const;
};

// One row per label seen in either list. With `num_classes` > 0, labels below
// it that have no attack row are listed in `missing`.
EvalReport build_report(const std::string& model, std::size_t num_classes, const std::vector<AttackSummary>& attacks,
                        const std::vector<JudgeVerdict>& verdicts);

}  // namespace gamin::eval

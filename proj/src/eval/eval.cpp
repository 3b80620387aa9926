#include "gamin/eval/eval.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "gamin/error.hpp"

namespace gamin::eval {

namespace {

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string("-"); }

template <typename F>
std::optional<double> mean_of(const std::vector<ReportRow>& rows, F&& pick) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (auto v = pick(r)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

targets::TrainedTarget train_judge(const data::LabeledImageSet& train, const data::LabeledImageSet& test,
                                   const JudgeOptions& options) {
  std::vector<bool> seen(train.num_classes, false);
  for (auto label : train.labels) seen[label] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw ConfigError("a judge needs training data from at least two classes");
  }
  auto [own, held_out] = data::split(train, options.holdout_fraction, options.seed);
  (void)held_out;
  targets::TrainOptions train_options;
  train_options.epochs = options.epochs;
  train_options.seed = options.seed;
  auto judge = targets::train_target(targets::build_target(targets::TargetName::cnn2, train.image_shape(),
                                                           train.num_classes),
                                     "judge", own, test, train_options);
  if (judge.report.acc_test < options.accuracy_gate) {
    throw Error(fmt::format("judge rejected: test accuracy {:.4f} below the {:.2f} gate", judge.report.acc_test,
                            options.accuracy_gate));
  }
  return judge;
}

nn::Tensor normalize_for_judge(const nn::Tensor& image) {
  if (image.empty()) return image;
  const auto [lo, hi] = std::minmax_element(image.values().begin(), image.values().end());
  nn::Tensor out(image.shape());
  const float span = *hi - *lo;
  if (span <= 0.0f) return out;
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = 2.0f * (image[i] - *lo) / span - 1.0f;
  return out;
}

JudgeVerdict judge_reconstruction(const nn::Model<float>& judge, const nn::Tensor& image, std::uint32_t label) {
  if (image.size() != judge.spec.input_size()) {
    throw ShapeError(fmt::format("judge expects {} values per image, got {}", judge.spec.input_size(), image.size()));
  }
  nn::Tensor normalized = normalize_for_judge(image);
  const nn::Tensor batch({1, image.size()}, std::vector<float>(normalized.values().begin(), normalized.values().end()));
  const nn::Tensor p = nn::forward(judge, batch, nn::Mode::infer);
  JudgeVerdict v;
  v.label = label;
  v.predicted = static_cast<std::uint32_t>(nn::argmax(p.row(0)));
  v.confidence = p[v.predicted];
  v.true_class_confidence = label < p.size() ? p[label] : 0.0;
  v.correct = v.predicted == label;
  return v;
}

AttackSummary summarize(const attack::AttackReport& report) {
  return {report.label, report.best_fidelity, report.best_combined_accuracy, report.best_m_global};
}

EvalReport build_report(const std::string& model, std::size_t num_classes, const std::vector<AttackSummary>& attacks,
                        const std::vector<JudgeVerdict>& verdicts) {
  std::map<std::uint32_t, ReportRow> by_label;
  for (const auto& a : attacks) {
    auto& row = by_label[a.label];
    row.label = a.label;
    row.attack = a;
  }
  for (const auto& v : verdicts) {
    auto& row = by_label[v.label];
    row.label = v.label;
    row.verdict = v;
  }
  EvalReport report;
  report.model = model;
  for (auto& [label, row] : by_label) report.rows.push_back(row);
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    const auto it = by_label.find(c);
    if (it == by_label.end() || !it->second.attack) report.missing.push_back(c);
  }
  const auto& rows = report.rows;
  report.mean_fidelity = mean_of(rows, [](const ReportRow& r) -> std::optional<double> {
    return r.attack ? std::optional(r.attack->fidelity) : std::nullopt;
  });
  report.mean_combined_accuracy = mean_of(rows, [](const ReportRow& r) -> std::optional<double> {
    return r.attack ? std::optional(r.attack->combined_accuracy) : std::nullopt;
  });
  report.mean_m_global = mean_of(rows, [](const ReportRow& r) -> std::optional<double> {
    return r.attack ? std::optional(r.attack->m_global) : std::nullopt;
  });
  report.judge_correct_fraction = mean_of(rows, [](const ReportRow& r) -> std::optional<double> {
    return r.verdict ? std::optional(r.verdict->correct ? 1.0 : 0.0) : std::nullopt;
  });
  for (const auto& r : rows) {
    if (r.verdict && r.verdict->true_class_confidence >= 0.5) ++report.majority_count;
  }
  return report;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "model,label,fidelity,combined_accuracy,m_global,judge_predicted,judge_confidence,judge_true_confidence,"
         "judge_correct\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},", model, r.label);
    if (r.attack) {
      out << fmt::format("{:.9g},{:.9g},{:.9g},", r.attack->fidelity, r.attack->combined_accuracy, r.attack->m_global);
    } else {
      out << ",,,";
    }
    if (r.verdict) {
      out << fmt::format("{},{:.9g},{:.9g},{}\n", r.verdict->predicted, r.verdict->confidence,
                         r.verdict->true_class_confidence, r.verdict->correct ? 1 : 0);
    } else {
      out << ",,,\n";
    }
  }
  const auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : std::string(); };
  out << fmt::format("{},mean,{},{},{},,,,{}\n", model, opt(mean_fidelity), opt(mean_combined_accuracy),
                     opt(mean_m_global), opt(judge_correct_fraction));
}

std::string EvalReport::text_table() const {
  std::string out = fmt::format("{:<8} {:>6} {:>8} {:>8} {:>8} {:>6} {:>8} {:>8}\n", "model", "label", "F_S", "A_SG",
                                "M_glob", "judge", "conf", "correct");
  for (const auto& r : rows) {
    const auto a = r.attack;
    const auto v = r.verdict;
    out += fmt::format("{:<8} {:>6} {:>8} {:>8} {:>8} {:>6} {:>8} {:>8}\n", model, r.label,
                       cell(a ? std::optional(a->fidelity) : std::nullopt),
                       cell(a ? std::optional(a->combined_accuracy) : std::nullopt),
                       cell(a ? std::optional(a->m_global) : std::nullopt), v ? std::to_string(v->predicted) : "-",
                       cell(v ? std::optional(v->true_class_confidence) : std::nullopt),
                       v ? (v->correct ? "yes" : "no") : "-");
  }
  out += fmt::format("{:<8} {:>6} {:>8} {:>8} {:>8} {:>6} {:>8} {:>8}\n", model, "mean", cell(mean_fidelity),
                     cell(mean_combined_accuracy), cell(mean_m_global), "", "", cell(judge_correct_fraction));
  out += fmt::format("majority: {} of {} judged classes\n", majority_count,
                     std::count_if(rows.begin(), rows.end(), [](const ReportRow& r) { return r.verdict.has_value(); }));
  if (!missing.empty()) {
    std::string labels;
    for (auto m : missing) labels += (labels.empty() ? "" : " ") + std::to_string(m);
    out += "missing attack rows: " + labels + "\n";
  }
  return out;
}

}  // namespace gamin::eval

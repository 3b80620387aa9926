// gamin: train targets, serve them, attack them, post-process and evaluate.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <regex>

#include <pthread.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gamin/attack/attack.hpp"
#include "gamin/cli/run_config.hpp"
#include "gamin/data/dataset.hpp"
#include "gamin/data/image_io.hpp"
#include "gamin/eval/eval.hpp"
#include "gamin/nn/serialize.hpp"
#include "gamin/oracle/oracle.hpp"
#include "gamin/oracle/server.hpp"
#include "gamin/postproc/postproc.hpp"
#include "gamin/targets/targets.hpp"

namespace fs = std::filesystem;
using namespace gamin;
using cli::KeySpec;
using cli::RunConfig;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kBudgetOrIo = 3, kNumerical = 4 };

class UsageError : public Error {
 public:
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void echo_config(const RunConfig& config, const fs::path& path, const std::string& command) {
  write_text(path, fmt::format("# resolved configuration of `gamin {}`\n{}", command, config.resolved()));
  fmt::print(stderr, "resolved configuration written to {}\n", path.string());
}

// Train and test sets from an MNIST IDX directory, a directory holding
// train/ and test/ image folders, or a single image folder split by seed.
std::pair<data::LabeledImageSet, data::LabeledImageSet> load_dataset(const fs::path& dir, std::size_t side,
                                                                     std::uint64_t seed) {
  if (fs::exists(dir / "train-images-idx3-ubyte")) {
    return {data::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", data::Split::train),
            data::load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", data::Split::test)};
  }
  if (fs::is_directory(dir / "train") && fs::is_directory(dir / "test")) {
    return {data::load_image_folder(dir / "train", side, side, data::Split::train),
            data::load_image_folder(dir / "test", side, side, data::Split::test)};
  }
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  return data::split(data::load_image_folder(dir, side, side), 0.2, seed);
}

// Registers --<key> for every config key plus --config.
struct CommandOptions {
  std::vector<KeySpec> keys;
  std::map<std::string, std::string> flags;
  std::string config_file;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key=value file; flags override its values");
    for (const auto& k : keys) {
      std::string flag = k.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      std::string help = k.help;
      if (!k.default_value.empty()) help += fmt::format(" (default {})", k.default_value);
      app.add_option_function<std::string>(
          "--" + flag, [this, key = k.key](const std::string& v) { flags[key] = v; }, help);
    }
  }

  RunConfig resolve() const {
    RunConfig config(keys);
    if (!config_file.empty()) config.load_file(config_file);
    for (const auto& [key, value] : flags) config.set(key, value);
    return config;
  }
};

std::string require(const RunConfig& c, const std::string& key) {
  if (!c.has(key)) throw UsageError(fmt::format("--{} is required", key));
  return c.get(key);
}

// ---------------------------------------------------------------- train-target

const std::vector<KeySpec> kTrainKeys{
    {"model", "", "soft | mlp1 | mlp2 | cnn1 | cnn2"},
    {"dataset", "data/mnist", "MNIST IDX directory or image-folder root"},
    {"image_size", "28", "side length for image-folder datasets"},
    {"epochs", "20", "training epochs"},
    {"batch", "64", "mini-batch size"},
    {"seed", "0", "initialisation and shuffling seed"},
    {"optimizer", "adam", "adam | sgd (plain training)"},
    {"lr", "0.001", "learning rate"},
    {"dp_clip", "", "per-example clipping norm; enables noisy SGD"},
    {"dp_noise", "", "noise multiplier for noisy SGD"},
    {"name", "", "output name (default: model, with _dp for noisy SGD)"},
    {"out", "out", "output directory"},
};

int train_target_cmd(const RunConfig& c) {
  const auto name = targets::parse_target_name(require(c, "model"));
  if (!name) throw UsageError(fmt::format("unknown model '{}'", c.get("model")));
  const bool dp = c.has("dp_clip") || c.has("dp_noise");
  const std::uint64_t seed = c.get_uint("seed");
  const fs::path out = c.get("out");
  std::string model_name = c.has("name") ? c.get("name") : std::string(targets::to_string(*name));
  std::transform(model_name.begin(), model_name.end(), model_name.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (!c.has("name") && dp) model_name += "_dp";

  auto [train, test] = load_dataset(c.get("dataset"), c.get_uint("image_size"), seed);
  const auto spec = targets::build_target(*name, train.image_shape(), train.num_classes);
  auto on_epoch = [](std::size_t epoch, double loss) { fmt::print(stderr, "epoch {} loss {:.4f}\n", epoch + 1, loss); };

  targets::TrainedTarget trained;
  if (dp) {
    targets::NoisySgdOptions opt;
    opt.clip_norm = c.has("dp_clip") ? c.get_double("dp_clip") : 1.0;
    opt.noise_multiplier = c.has("dp_noise") ? c.get_double("dp_noise") : 1.0;
    opt.learning_rate = c.get_double("lr");
    opt.epochs = c.get_uint("epochs");
    opt.batch = c.get_uint("batch");
    opt.seed = seed;
    opt.on_epoch = on_epoch;
    trained = targets::train_target_noisy(spec, std::string(targets::to_string(*name)), train, test, opt);
  } else {
    targets::TrainOptions opt;
    opt.epochs = c.get_uint("epochs");
    opt.batch = c.get_uint("batch");
    opt.seed = seed;
    const std::string optimizer = c.get("optimizer");
    if (optimizer == "adam") {
      opt.optimizer = targets::Optimizer::adam;
      opt.adam.learning_rate = c.get_double("lr");
    } else if (optimizer == "sgd") {
      opt.optimizer = targets::Optimizer::sgd;
      opt.sgd_learning_rate = c.get_double("lr");
    } else {
      throw UsageError(fmt::format("unknown optimizer '{}'", optimizer));
    }
    opt.on_epoch = on_epoch;
    trained = targets::train_target(spec, std::string(targets::to_string(*name)), train, test, opt);
  }
  nn::save_model(out / "models" / (model_name + ".gmn"), trained.model);
  const std::string record = trained.report.to_json().dump(2);
  write_text(out / "reports" / (model_name + "_train.json"), record + "\n");
  echo_config(c, out / "reports" / (model_name + "_train.config"), "train-target");
  fmt::print("{}\n", record);
  return kOk;
}

// ----------------------------------------------------------------- train-judge

const std::vector<KeySpec> kJudgeKeys{
    {"dataset", "data/mnist", "MNIST IDX directory or image-folder root"},
    {"image_size", "28", "side length for image-folder datasets"},
    {"epochs", "2", "training epochs"},
    {"seed", "1", "seed; also picks the held-out part of the training set"},
    {"holdout", "0.1", "fraction of training images the judge never sees"},
    {"gate", "0.97", "minimum test accuracy"},
    {"name", "judge", "output name"},
    {"out", "out", "output directory"},
};

int train_judge_cmd(const RunConfig& c) {
  const fs::path out = c.get("out");
  auto [train, test] = load_dataset(c.get("dataset"), c.get_uint("image_size"), c.get_uint("seed"));
  eval::JudgeOptions opt;
  opt.epochs = c.get_uint("epochs");
  opt.seed = c.get_uint("seed");
  opt.holdout_fraction = c.get_double("holdout");
  opt.accuracy_gate = c.get_double("gate");
  const auto judge = eval::train_judge(train, test, opt);
  nn::save_model(out / "models" / (c.get("name") + ".gmn"), judge.model);
  const std::string record = judge.report.to_json().dump(2);
  write_text(out / "reports" / (c.get("name") + "_train.json"), record + "\n");
  echo_config(c, out / "reports" / (c.get("name") + "_train.config"), "train-judge");
  fmt::print("{}\n", record);
  return kOk;
}

// ----------------------------------------------------------------------- serve

const std::vector<KeySpec> kServeKeys{
    {"model", "", "model container to serve"},
    {"bind", "127.0.0.1:7070", "IPv4 address and port"},
};

std::pair<std::string, std::uint16_t> split_host_port(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw UsageError(fmt::format("expected host:port, got '{}'", text));
  unsigned port = 0;
  const std::string digits = text.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || port > 65535) {
    throw UsageError(fmt::format("bad port in '{}'", text));
  }
  return {text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

int serve_cmd(const RunConfig& c) {
  const auto model = nn::load_model(require(c, "model"));
  const auto [host, port] = split_host_port(c.get("bind"));
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);  // inherited by the server threads
  oracle::OracleServer server(model, host, port);
  server.start();
  fmt::print(stderr, "serving {} on {}:{} (input {} values, {} classes)\n", c.get("model"), host, server.port(),
             model.spec.input_size(), model.spec.output_dim);
  fmt::print(stderr, "{}", c.resolved());
  int received = 0;
  sigwait(&signals, &received);
  fmt::print(stderr, "signal {} received, shutting down after {} requests\n", received, server.requests_served());
  server.stop();
  return kOk;
}

// ---------------------------------------------------------------------- attack

const std::vector<KeySpec> kAttackKeys{
    {"oracle", "", "local:<model path> | remote:<host>:<port>"},
    {"input_dim", "784", "input size of a remote oracle"},
    {"classes", "10", "class count of a remote oracle"},
    {"defense_round", "", "round local oracle outputs to this many decimals"},
    {"label", "", "target class"},
    {"budget", "1280000", "query budget"},
    {"max_steps", "0", "step cap, 0 for none"},
    {"batch", "64", "batch size"},
    {"latent_dim", "10", "generator latent size"},
    {"k0", "0.001", "initial equilibrium factor"},
    {"lambda_k", "0.01", "equilibrium learning rate"},
    {"gamma_k", "0.5", "equilibrium ratio"},
    {"clamp_k", "true", "clamp k to [0, 1]"},
    {"surrogate_lr", "0.00001", "surrogate Adam learning rate"},
    {"surrogate_beta1", "0.99", ""},
    {"surrogate_beta2", "0.99", ""},
    {"surrogate_epsilon", "0.00000001", ""},
    {"generator_lr", "0.00001", "generator Adam learning rate"},
    {"generator_beta1", "0.99", ""},
    {"generator_beta2", "0.99", ""},
    {"generator_epsilon", "0.00000001", ""},
    {"fidelity_probe", "step_noise", "step_noise | uniform"},
    {"report_probes", "1000", "latent draws for the reported combined accuracy"},
    {"seed", "0", "attack seed"},
    {"log_every", "100", "progress line period in steps, 0 for none"},
    {"out", "out", "output directory"},
};

attack::AttackConfig attack_config_from(const RunConfig& c) {
  attack::AttackConfig a;
  a.k0 = c.get_double("k0");
  a.lambda_k = c.get_double("lambda_k");
  a.gamma_k = c.get_double("gamma_k");
  a.clamp_k = c.get_bool("clamp_k");
  a.surrogate_adam = {c.get_double("surrogate_lr"), c.get_double("surrogate_beta1"), c.get_double("surrogate_beta2"),
                      c.get_double("surrogate_epsilon")};
  a.generator_adam = {c.get_double("generator_lr"), c.get_double("generator_beta1"), c.get_double("generator_beta2"),
                      c.get_double("generator_epsilon")};
  a.batch = c.get_uint("batch");
  a.latent_dim = c.get_uint("latent_dim");
  a.budget = c.get_uint("budget");
  a.max_steps = c.get_uint("max_steps");
  const std::string probe = c.get("fidelity_probe");
  if (probe == "step_noise") {
    a.fidelity_probe = attack::FidelityProbe::step_noise;
  } else if (probe == "uniform") {
    a.fidelity_probe = attack::FidelityProbe::uniform;
  } else {
    throw UsageError(fmt::format("unknown fidelity_probe '{}'", probe));
  }
  a.report_probes = c.get_uint("report_probes");
  a.seed = c.get_uint("seed");
  a.validate();
  return a;
}

int attack_cmd(const RunConfig& c) {
  const std::string spec = require(c, "oracle");
  require(c, "label");
  const std::uint64_t label = c.get_uint("label");
  const auto cfg = attack_config_from(c);
  oracle::Defense defense;
  if (c.has("defense_round")) defense.round_decimals = static_cast<int>(c.get_uint("defense_round"));

  std::shared_ptr<oracle::Predictor> predictor;
  if (spec.rfind("local:", 0) == 0) {
    predictor = std::make_shared<oracle::LocalPredictor>(nn::load_model(spec.substr(6)));
  } else if (spec.rfind("remote:", 0) == 0) {
    const auto [host, port] = split_host_port(spec.substr(7));
    predictor = std::make_shared<oracle::RemotePredictor>(host, port, c.get_uint("input_dim"), c.get_uint("classes"));
  } else {
    throw UsageError(fmt::format("--oracle must be local:<path> or remote:<host>:<port>, got '{}'", spec));
  }
  if (label >= predictor->num_classes()) {
    throw UsageError(fmt::format("label {} outside the oracle's {} classes", label, predictor->num_classes()));
  }
  oracle::Oracle oracle(predictor, cfg.budget, defense);

  const fs::path out = c.get("out");
  const std::string tag = fmt::format("label_{}", label);
  echo_config(c, out / "reports" / ("attack_" + tag + ".config"), "attack");
  const std::uint64_t log_every = c.get_uint("log_every");
  double best = std::numeric_limits<double>::infinity();
  const auto report = attack::gamin_attack(oracle, static_cast<std::uint32_t>(label), cfg, [&](const attack::HistoryRow& r) {
    best = std::min(best, r.m_global);
    if (log_every != 0 && r.step % log_every == 0) {
      fmt::print(stderr, "step {:>6}  Lnoise {:.4f}  Lgen {:.4f}  k {:.4f}  M {:.4f}  best M {:.4f}  F {:.4f}  A {:.3f}\n",
                 r.step, r.lnoise, r.lgen, r.k, r.m_global, best, r.fidelity, r.combined_accuracy);
    }
    return true;
  });

  nn::save_model(out / "models" / ("best_generator_" + tag + ".gmn"), report.best_generator);
  nn::save_model(out / "models" / ("best_surrogate_" + tag + ".gmn"), report.best_surrogate);
  attack::write_history_csv(out / "history" / ("attack_" + tag + ".csv"), report.history);
  nlohmann::json record = report.to_json();
  record["config"] = cfg.to_json();
  record["oracle"] = spec;
  write_text(out / "reports" / ("attack_" + tag + ".json"), record.dump(2) + "\n");
  fmt::print("{}\n", report.to_json().dump(2));
  return kOk;
}

// ----------------------------------------------------------------- postprocess

const std::vector<KeySpec> kPostKeys{
    {"generator", "", "generator container"},
    {"samples", "1000", "generated samples"},
    {"threshold", "0.9", "fraction of samples a frequency must appear in"},
    {"presence_factor", "1.0", "a frequency appears above factor times the sample's median magnitude"},
    {"frequency_filter", "true", "apply the common-frequency filter"},
    {"blur_sigma", "1.0", "Gaussian blur sigma, 0 disables"},
    {"blur_kernel", "5", "Gaussian kernel extent (odd)"},
    {"edge", "laplacian", "laplacian | sobel | none"},
    {"per_channel", "true", "one frequency mask per channel"},
    {"seed", "0", "latent sampling seed"},
    {"out", "reconstruction.png", "output PNG"},
    {"raw", "", "optional raw float32 dump of the reconstruction"},
};

int postprocess_cmd(const RunConfig& c) {
  postproc::ReconstructionConfig r;
  r.samples = c.get_uint("samples");
  r.presence_threshold = c.get_double("threshold");
  r.presence_factor = c.get_double("presence_factor");
  r.frequency_filter = c.get_bool("frequency_filter");
  r.blur_sigma = c.get_double("blur_sigma");
  r.blur_kernel = c.get_uint("blur_kernel");
  const auto edge = postproc::parse_edge_filter(c.get("edge"));
  if (!edge) throw UsageError(fmt::format("unknown edge filter '{}'", c.get("edge")));
  r.edge = *edge;
  r.per_channel = c.get_bool("per_channel");
  r.seed = c.get_uint("seed");
  r.validate();
  const auto generator = nn::load_model(require(c, "generator"));
  const auto image = postproc::postprocess(generator, r);
  const fs::path out = c.get("out");
  data::write_png(out, image);
  if (c.has("raw")) postproc::write_raw_tensor(c.get("raw"), image);
  fs::path echo = out;
  echo.replace_extension(".config");
  echo_config(c, echo, "postprocess");
  fmt::print("{}\n", out.string());
  return kOk;
}

// -------------------------------------------------------------------- evaluate

const std::vector<KeySpec> kEvalKeys{
    {"judge", "", "judge container"},
    {"reconstructions", "", "directory of PNGs whose file names end in the class id"},
    {"attacks", "", "directory of attack_label_<k>.json reports (optional)"},
    {"model", "target", "target name for the report rows"},
    {"classes", "0", "expected class count; missing attack rows are flagged"},
    {"out", "out/reports/evaluation", "report path prefix (.csv and .txt are written)"},
};

std::optional<std::uint32_t> trailing_label(const std::string& stem) {
  static const std::regex pattern(R"((\d+)$)");
  std::smatch m;
  if (!std::regex_search(stem, m, pattern)) return std::nullopt;
  return static_cast<std::uint32_t>(std::stoul(m[1].str()));
}

int evaluate_cmd(const RunConfig& c) {
  const auto judge = nn::load_model(require(c, "judge"));
  const fs::path dir = require(c, "reconstructions");
  if (!fs::is_directory(dir)) throw IoError("reconstruction directory not found: " + dir.string());

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png" && trailing_label(e.path().stem().string())) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<eval::JudgeVerdict> verdicts;
  for (const auto& f : files) {
    const auto label = *trailing_label(f.stem().string());
    auto image = data::read_image(f);
    if (image.size() != judge.spec.input_size()) {
      const std::size_t side = static_cast<std::size_t>(std::llround(std::sqrt(double(judge.spec.input_size()))));
      image = data::resize_bilinear(image, side, side);
    }
    verdicts.push_back(eval::judge_reconstruction(judge, image, label));
  }

  std::vector<eval::AttackSummary> attacks;
  if (c.has("attacks")) {
    for (const auto& e : fs::directory_iterator(c.get("attacks"))) {
      const std::string name = e.path().filename().string();
      if (name.rfind("attack_", 0) != 0 || e.path().extension() != ".json") continue;
      std::ifstream in(e.path());
      const auto j = nlohmann::json::parse(in);
      attacks.push_back({j.at("label").get<std::uint32_t>(), j.at("best_fidelity").get<double>(),
                         j.at("best_combined_accuracy").get<double>(), j.at("best_m_global").get<double>()});
    }
  }
  if (files.empty() && attacks.empty()) fmt::print(stderr, "warning: no reconstructions found in {}\n", dir.string());

  const auto report = eval::build_report(c.get("model"), c.get_uint("classes"), attacks, verdicts);
  const fs::path prefix = c.get("out");
  report.write_csv(prefix.string() + ".csv");
  write_text(prefix.string() + ".txt", report.text_table());
  echo_config(c, prefix.string() + ".config", "evaluate");
  if (!report.missing.empty()) fmt::print(stderr, "warning: {} classes have no attack row\n", report.missing.size());
  fmt::print("{}", report.text_table());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-inversion attack toolkit: targets, oracle service, attack, post-processing, evaluation"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    CommandOptions options;
    int (*run)(const RunConfig&);
    CLI::App* app = nullptr;
  };
  std::vector<Command> commands;
  commands.push_back({"train-target", "train a target model", {kTrainKeys, {}, {}}, train_target_cmd});
  commands.push_back({"train-judge", "train the evaluation judge", {kJudgeKeys, {}, {}}, train_judge_cmd});
  commands.push_back({"serve", "serve a model over the oracle protocol", {kServeKeys, {}, {}}, serve_cmd});
  commands.push_back({"attack", "run the inversion attack on one class", {kAttackKeys, {}, {}}, attack_cmd});
  commands.push_back({"postprocess", "turn a generator into one reconstruction", {kPostKeys, {}, {}}, postprocess_cmd});
  commands.push_back({"evaluate", "judge reconstructions and tabulate", {kEvalKeys, {}, {}}, evaluate_cmd});
  for (auto& cmd : commands) {
    cmd.app = app.add_subcommand(cmd.name, cmd.help);
    cmd.options.attach(*cmd.app);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  for (auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      return cmd.run(cmd.options.resolve());
    } catch (const UsageError& e) {
      fmt::print(stderr, "usage error: {}\n", e.what());
      return kUsage;
    } catch (const ConfigError& e) {
      fmt::print(stderr, "configuration error: {}\n", e.what());
      return kUsage;
    } catch (const oracle::BudgetExhausted& e) {
      fmt::print(stderr, "budget error: {}\n", e.what());
      return kBudgetOrIo;
    } catch (const oracle::TransportError& e) {
      fmt::print(stderr, "oracle connection failed (one reconnect was attempted): {}\n", e.what());
      return kBudgetOrIo;
    } catch (const oracle::RemoteError& e) {
      fmt::print(stderr, "{}\n", e.what());
      return kBudgetOrIo;
    } catch (const IoError& e) {
      fmt::print(stderr, "I/O error: {}\n", e.what());
      return kBudgetOrIo;
    } catch (const FormatError& e) {
      fmt::print(stderr, "format error: {}\n", e.what());
      return kBudgetOrIo;
    } catch (const NumericalError& e) {
      fmt::print(stderr, "numerical failure: {}\n", e.what());
      return kNumerical;
    } catch (const ShapeError& e) {
      fmt::print(stderr, "shape error: {}\n", e.what());
      return kUsage;
    } catch (const std::exception& e) {
      fmt::print(stderr, "error: {}\n", e.what());
      return kFailure;
    }
  }
  return kUsage;
}

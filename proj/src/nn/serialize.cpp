#include "gamin/nn/serialize.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace gamin::nn {
namespace {

static_assert(sizeof(float) == 4);

void append_float_le(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char raw[4];
  std::memcpy(raw, &bits, 4);
  out.append(raw, 4);
}

float read_float_le(const char* raw) {
  std::uint32_t bits;
  std::memcpy(&bits, raw, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

// Walks the header one line at a time, remembering byte offsets for errors.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  std::vector<std::string_view> next_line(std::string_view expect_what) {
    line_start_ = pos_;
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) {
      throw FormatError(fmt::format("truncated header: missing {}", expect_what), pos_);
    }
    std::string_view line = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    std::vector<std::string_view> words;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && line[i] == ' ') ++i;
      const std::size_t j = line.find(' ', i);
      const std::size_t stop = j == std::string_view::npos ? line.size() : j;
      if (stop > i) words.push_back(line.substr(i, stop - i));
      i = stop;
    }
    if (words.empty()) throw FormatError(fmt::format("empty header line where {} was expected", expect_what), line_start_);
    return words;
  }

  std::size_t line_start() const { return line_start_; }

  template <typename N>
  N number(std::string_view word) const {
    N value{};
    const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), value);
    if (ec != std::errc() || ptr != word.data() + word.size()) {
      throw FormatError(fmt::format("malformed number '{}'", word), line_start_);
    }
    return value;
  }

  std::vector<std::string_view> keyed(std::string_view key, std::size_t min_values) {
    auto words = next_line(key);
    if (words[0] != key || words.size() < 1 + min_values) {
      throw FormatError(fmt::format("expected '{}' line", key), line_start_);
    }
    words.erase(words.begin());
    return words;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

std::string layer_line(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::dense:
      return fmt::format("dense {} {}", layer.units, to_string(layer.activation));
    case LayerKind::conv2d:
      return fmt::format("conv2d {} {} {}", layer.units, layer.extent, to_string(layer.activation));
    case LayerKind::maxpool2d:
      return fmt::format("maxpool2d {} identity", layer.extent);
    case LayerKind::dropout:
      return fmt::format("dropout {} identity", layer.drop);
    case LayerKind::flatten:
      return "flatten identity";
    case LayerKind::reshape:
      return fmt::format("reshape {} identity", fmt::join(layer.target, " "));
  }
  return {};
}

LayerSpec parse_layer(HeaderReader& reader) {
  const auto words = reader.next_line("layer");
  const auto kind = parse_layer_kind(words[0]);
  if (!kind) throw FormatError(fmt::format("unknown layer kind '{}'", words[0]), reader.line_start());
  const auto activation = parse_activation(words.back());
  if (!activation || words.size() < 2) {
    throw FormatError(fmt::format("layer line must end with an activation, got '{}'", words.back()),
                      reader.line_start());
  }
  const std::size_t nargs = words.size() - 2;
  auto need = [&](std::size_t n) {
    if (nargs != n) {
      throw FormatError(fmt::format("{} layer takes {} size parameters, got {}", words[0], n, nargs),
                        reader.line_start());
    }
  };
  LayerSpec layer;
  switch (*kind) {
    case LayerKind::dense:
      need(1);
      layer = LayerSpec::dense(reader.number<std::size_t>(words[1]), *activation);
      break;
    case LayerKind::conv2d:
      need(2);
      layer = LayerSpec::conv2d(reader.number<std::size_t>(words[1]), reader.number<std::size_t>(words[2]),
                                *activation);
      break;
    case LayerKind::maxpool2d:
      need(1);
      layer = LayerSpec::maxpool2d(reader.number<std::size_t>(words[1]));
      break;
    case LayerKind::dropout:
      need(1);
      layer = LayerSpec::dropout(reader.number<double>(words[1]));
      break;
    case LayerKind::flatten:
      need(0);
      layer = LayerSpec::flatten();
      break;
    case LayerKind::reshape: {
      if (nargs == 0) throw FormatError("reshape layer needs a target shape", reader.line_start());
      Shape target;
      for (std::size_t i = 1; i + 1 < words.size(); ++i) target.push_back(reader.number<std::size_t>(words[i]));
      layer = LayerSpec::reshape(std::move(target));
      break;
    }
  }
  layer.activation = *activation;
  return layer;
}

}  // namespace

std::string serialize(const ArchitectureSpec& spec, const ModelParams<float>& params) {
  check_congruent(spec, params);
  std::string out;
  out += fmt::format("{}\n", kModelMagic);
  out += fmt::format("input {}\n", fmt::join(spec.input, " "));
  out += fmt::format("output {}\n", spec.output_dim);
  out += fmt::format("seed {}\n", params.seed);
  out += fmt::format("layers {}\n", spec.layers.size());
  for (const LayerSpec& layer : spec.layers) out += layer_line(layer) + "\n";
  out += fmt::format("params {}\n", params.count());
  out.reserve(out.size() + 4 * params.count());
  for (const auto& layer : params.layers) {
    for (float w : layer.weights) append_float_le(out, w);
    for (float b : layer.bias) append_float_le(out, b);
  }
  return out;
}

Model<float> deserialize(std::string_view bytes) {
  if (bytes.empty()) throw FormatError("empty model stream", 0);
  const std::string expected_magic = std::string(kModelMagic) + "\n";
  if (bytes.substr(0, expected_magic.size()) != expected_magic) {
    throw FormatError(fmt::format("bad magic header: expected '{}'", kModelMagic), 0);
  }
  HeaderReader reader(bytes);
  reader.next_line("magic");

  Model<float> model;
  for (auto word : reader.keyed("input", 1)) model.spec.input.push_back(reader.number<std::size_t>(word));
  model.spec.output_dim = reader.number<std::size_t>(reader.keyed("output", 1)[0]);
  model.params.seed = reader.number<std::uint64_t>(reader.keyed("seed", 1)[0]);
  const auto layer_count = reader.number<std::size_t>(reader.keyed("layers", 1)[0]);
  for (std::size_t i = 0; i < layer_count; ++i) model.spec.layers.push_back(parse_layer(reader));
  const auto declared = reader.number<std::size_t>(reader.keyed("params", 1)[0]);
  const std::size_t header_end = reader.offset();

  std::vector<ParamCounts> counts;
  try {
    counts = param_counts(model.spec);
  } catch (const ShapeError& e) {
    throw FormatError(fmt::format("header describes an invalid architecture: {}", e.what()), header_end);
  }
  std::size_t expected = 0;
  for (const auto& c : counts) expected += c.weights + c.bias;
  if (declared != expected) {
    throw FormatError(fmt::format("header declares {} parameters, architecture needs {}", declared, expected),
                      header_end);
  }
  const std::size_t payload = bytes.size() - header_end;
  if (payload != 4 * expected) {
    throw FormatError(fmt::format("parameter payload holds {} bytes, expected {}", payload, 4 * expected),
                      header_end + std::min(payload, 4 * expected));
  }
  const char* raw = bytes.data() + header_end;
  model.params.layers.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    auto& lp = model.params.layers[i];
    lp.weights.resize(counts[i].weights);
    lp.bias.resize(counts[i].bias);
    for (float& w : lp.weights) {
      w = read_float_le(raw);
      raw += 4;
    }
    for (float& b : lp.bias) {
      b = read_float_le(raw);
      raw += 4;
    }
  }
  return model;
}

void save_model(const std::filesystem::path& path, const Model<float>& model) {
  const std::string bytes = serialize(model.spec, model.params);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Model<float> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return deserialize(buffer.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace gamin::nn

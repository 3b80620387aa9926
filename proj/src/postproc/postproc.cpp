#include "gamin/postproc/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "gamin/error.hpp"

namespace gamin::postproc {

namespace {

constexpr int kBorder = cv::BORDER_REFLECT_101;

struct BatchDims {
  std::size_t n, c, h, w;
};

BatchDims batch_dims(const nn::Tensor& batch) {
  if (batch.rank() != 4) {
    throw ShapeError("expected a [n, c, h, w] batch, got " + nn::to_string(batch.shape()));
  }
  return {batch.dim(0), batch.dim(1), batch.dim(2), batch.dim(3)};
}

cv::Mat plane(const float* values, std::size_t h, std::size_t w) {
  cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_64F);
  for (std::size_t i = 0; i < h * w; ++i) m.at<double>(static_cast<int>(i)) = values[i];
  return m;
}

void store(const cv::Mat& m, float* out) {
  for (int i = 0; i < static_cast<int>(m.total()); ++i) out[i] = static_cast<float>(m.at<double>(i));
}

cv::Mat spectrum(const float* values, std::size_t h, std::size_t w) {
  cv::Mat freq;
  cv::dft(plane(values, h, w), freq, cv::DFT_COMPLEX_OUTPUT);
  return freq;
}

// Conjugate bins of a real signal share one magnitude; they are averaged so
// round-off cannot split a pair across the presence cut.
std::vector<double> magnitudes(const cv::Mat& freq) {
  const int h = freq.rows, w = freq.cols;
  std::vector<double> mag(freq.total());
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      const auto& a = freq.at<cv::Vec2d>(u, v);
      const auto& b = freq.at<cv::Vec2d>((h - u) % h, (w - v) % w);
      mag[static_cast<std::size_t>(u * w + v)] = 0.5 * (std::hypot(a[0], a[1]) + std::hypot(b[0], b[1]));
    }
  }
  return mag;
}

double lower_median(std::vector<double> values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>((values.size() - 1) / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace

std::string_view to_string(EdgeFilter edge) {
  switch (edge) {
    case EdgeFilter::laplacian: return "laplacian";
    case EdgeFilter::sobel: return "sobel";
    case EdgeFilter::none: return "none";
  }
  return "?";
}

std::optional<EdgeFilter> parse_edge_filter(std::string_view text) {
  for (EdgeFilter e : {EdgeFilter::laplacian, EdgeFilter::sobel, EdgeFilter::none}) {
    if (text == to_string(e)) return e;
  }
  return std::nullopt;
}

void ReconstructionConfig::validate() const {
  if (samples < 2) throw ConfigError(fmt::format("sample count must be at least 2, got {}", samples));
  if (!(presence_threshold > 0.0 && presence_threshold <= 1.0)) {
    throw ConfigError(fmt::format("presence threshold {} outside (0, 1]", presence_threshold));
  }
  if (!(presence_factor >= 0.0)) throw ConfigError("presence factor must be non-negative");
  if (!(blur_sigma >= 0.0)) throw ConfigError("blur sigma must be non-negative");
  if (blur_kernel % 2 == 0) throw ConfigError(fmt::format("blur kernel extent {} must be odd", blur_kernel));
}

nlohmann::json ReconstructionConfig::to_json() const {
  return {{"samples", samples},
          {"presence_threshold", presence_threshold},
          {"presence_factor", presence_factor},
          {"frequency_filter", frequency_filter},
          {"blur_sigma", blur_sigma},
          {"blur_kernel", blur_kernel},
          {"edge", std::string(to_string(edge))},
          {"per_channel", per_channel},
          {"seed", seed}};
}

nn::Shape image_shape_for(std::size_t output_dim) {
  const auto side = [](std::size_t n) -> std::size_t {
    const auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    return s * s == n ? s : 0;
  };
  if (const std::size_t s = side(output_dim); s != 0) return {1, s, s};
  if (output_dim % 3 == 0) {
    if (const std::size_t s = side(output_dim / 3); s != 0) return {3, s, s};
  }
  throw ShapeError(fmt::format("cannot lay out {} generator outputs as a square image", output_dim));
}

nn::Tensor generate_batch(const nn::Model<float>& generator, std::size_t n, std::uint64_t seed,
                          const nn::Shape& image_shape) {
  if (n == 0) throw ConfigError("generate_batch needs n >= 1");
  if (nn::shape_size(image_shape) != generator.spec.output_dim || image_shape.size() != 3) {
    throw ShapeError(fmt::format("image shape {} does not hold the generator's {} outputs",
                                 nn::to_string(image_shape), generator.spec.output_dim));
  }
  nn::Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  nn::Tensor z({n, generator.spec.input_size()});
  for (float& v : z.values()) v = normal(rng);
  nn::Tensor out = nn::forward(generator, z, nn::Mode::infer);
  return nn::Tensor({n, image_shape[0], image_shape[1], image_shape[2]},
                    std::vector<float>(out.values().begin(), out.values().end()));
}

nn::Tensor generate_batch(const nn::Model<float>& generator, std::size_t n, std::uint64_t seed) {
  return generate_batch(generator, n, seed, image_shape_for(generator.spec.output_dim));
}

FrequencyMask common_frequency_mask(const nn::Tensor& batch, const ReconstructionConfig& config) {
  const auto [n, c, h, w] = batch_dims(batch);
  if (n == 0) throw ShapeError("empty batch");
  if (h < 2 || w < 2) throw ShapeError("frequency filtering needs spatial extents of at least 2");
  const std::size_t bins = h * w;
  const std::size_t groups = config.per_channel ? c : 1;
  std::vector<std::vector<std::size_t>> votes(groups, std::vector<std::size_t>(bins, 0));

  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> joint(bins, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto mag = magnitudes(spectrum(batch.data() + (s * c + ch) * bins, h, w));
      if (config.per_channel) {
        const double cut = config.presence_factor * lower_median(mag);
        for (std::size_t b = 0; b < bins; ++b) votes[ch][b] += mag[b] > cut ? 1 : 0;
      } else {
        for (std::size_t b = 0; b < bins; ++b) joint[b] += mag[b];
      }
    }
    if (!config.per_channel) {
      const double cut = config.presence_factor * lower_median(joint);
      for (std::size_t b = 0; b < bins; ++b) votes[0][b] += joint[b] > cut ? 1 : 0;
    }
  }

  FrequencyMask mask{h, w, std::vector<std::vector<bool>>(c, std::vector<bool>(bins))};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto& v = votes[config.per_channel ? ch : 0];
    for (std::size_t b = 0; b < bins; ++b) {
      mask.keep[ch][b] = static_cast<double>(v[b]) >= config.presence_threshold * static_cast<double>(n) - 1e-9;
    }
  }
  return mask;
}

nn::Tensor apply_frequency_mask(const nn::Tensor& batch, const FrequencyMask& mask) {
  const auto [n, c, h, w] = batch_dims(batch);
  if (h != mask.height || w != mask.width || c != mask.keep.size()) {
    throw ShapeError("frequency mask does not match the batch");
  }
  nn::Tensor out(batch.shape());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t offset = (s * c + ch) * h * w;
      cv::Mat freq = spectrum(batch.data() + offset, h, w);
      for (std::size_t b = 0; b < h * w; ++b) {
        if (!mask.keep[ch][b]) freq.at<cv::Vec2d>(static_cast<int>(b)) = cv::Vec2d(0.0, 0.0);
      }
      cv::Mat back;
      cv::dft(freq, back, cv::DFT_INVERSE | cv::DFT_SCALE | cv::DFT_COMPLEX_OUTPUT);
      cv::Mat parts[2];
      cv::split(back, parts);
      store(parts[0], out.data() + offset);
    }
  }
  return out;
}

nn::Tensor common_frequency_filter(const nn::Tensor& batch, const ReconstructionConfig& config) {
  return apply_frequency_mask(batch, common_frequency_mask(batch, config));
}

nn::Tensor transform_image(const nn::Tensor& chw, const ReconstructionConfig& config) {
  if (chw.rank() != 3) throw ShapeError("expected a [c, h, w] image, got " + nn::to_string(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  nn::Tensor out(chw.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    cv::Mat img = plane(chw.data() + ch * h * w, h, w);
    if (config.blur_sigma > 0.0) {
      const int k = static_cast<int>(config.blur_kernel);
      cv::Mat blurred;
      cv::GaussianBlur(img, blurred, cv::Size(k, k), config.blur_sigma, config.blur_sigma, kBorder);
      img = blurred;
    }
    switch (config.edge) {
      case EdgeFilter::laplacian: {
        cv::Mat lap;
        cv::Laplacian(img, lap, CV_64F, 1, 1.0, 0.0, kBorder);
        img = cv::abs(lap);
        break;
      }
      case EdgeFilter::sobel: {
        cv::Mat gx, gy, mag;
        cv::Sobel(img, gx, CV_64F, 1, 0, 3, 1.0, 0.0, kBorder);
        cv::Sobel(img, gy, CV_64F, 0, 1, 3, 1.0, 0.0, kBorder);
        cv::magnitude(gx, gy, mag);
        img = mag;
        break;
      }
      case EdgeFilter::none:
        break;
    }
    store(img, out.data() + ch * h * w);
  }
  return out;
}

nn::Tensor pixel_median(const nn::Tensor& batch) {
  const auto [n, c, h, w] = batch_dims(batch);
  if (n == 0) throw ShapeError("median of an empty batch");
  const std::size_t pixels = c * h * w;
  nn::Tensor out({c, h, w});
  std::vector<float> column(n);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t s = 0; s < n; ++s) column[s] = batch[s * pixels + p];
    const auto mid = column.begin() + static_cast<std::ptrdiff_t>((n - 1) / 2);
    std::nth_element(column.begin(), mid, column.end());
    out[p] = *mid;
  }
  return out;
}

nn::Tensor reconstruct(const nn::Tensor& filtered, const ReconstructionConfig& config) {
  const auto [n, c, h, w] = batch_dims(filtered);
  const std::size_t pixels = c * h * w;
  nn::Tensor transformed(filtered.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const nn::Tensor one({c, h, w}, std::vector<float>(filtered.data() + s * pixels, filtered.data() + (s + 1) * pixels));
    const nn::Tensor t = transform_image(one, config);
    std::copy(t.values().begin(), t.values().end(), transformed.data() + s * pixels);
  }
  return pixel_median(transformed);
}

nn::Tensor postprocess(const nn::Model<float>& generator, const ReconstructionConfig& config) {
  config.validate();
  nn::Tensor batch = generate_batch(generator, config.samples, config.seed);
  if (config.frequency_filter) batch = common_frequency_filter(batch, config);
  return reconstruct(batch, config);
}

void write_raw_tensor(const std::filesystem::path& path, const nn::Tensor& tensor) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t rank = tensor.rank();
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (std::size_t e : tensor.shape()) {
    const std::uint64_t extent = e;
    out.write(reinterpret_cast<const char*>(&extent), sizeof extent);
  }
  out.write(reinterpret_cast<const char*>(tensor.data()), static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  if (!out) throw IoError("cannot write " + path.string());
}

nn::Tensor read_raw_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint64_t rank = 0;
  if (!in.read(reinterpret_cast<char*>(&rank), sizeof rank) || rank > 8) {
    throw FormatError("bad tensor header in " + path.string(), 0);
  }
  nn::Shape shape(rank);
  for (auto& e : shape) {
    std::uint64_t extent = 0;
    if (!in.read(reinterpret_cast<char*>(&extent), sizeof extent)) {
      throw FormatError("truncated tensor header in " + path.string(), static_cast<std::size_t>(in.gcount()));
    }
    e = extent;
  }
  nn::Tensor t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
    throw FormatError("truncated tensor payload in " + path.string(), 8 * (rank + 1));
  }
  return t;
}

}  // namespace gamin::postproc

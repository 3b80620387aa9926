#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gamin/nn/model.hpp"

namespace gamin::postproc {

enum class EdgeFilter { laplacian, sobel, none };

std::string_view to_string(EdgeFilter edge);
std::optional<EdgeFilter> parse_edge_filter(std::string_view text);

struct ReconstructionConfig {
  std::size_t samples = 1000;
  double presence_threshold = 0.90;  // fraction of samples a bin must appear in
  double presence_factor = 1.0;      // a bin appears when |F| > factor * median |F| of its sample
  bool frequency_filter = true;
  double blur_sigma = 1.0;           // 0 disables the blur
  std::size_t blur_kernel = 5;       // odd
  EdgeFilter edge = EdgeFilter::laplacian;
  bool per_channel = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

// [channels, height, width] of a generator's flat output: a single square
// channel, or three square channels when the size only splits that way.
nn::Shape image_shape_for(std::size_t output_dim);

// n generator outputs from fresh N(0, 1) latents, inference mode:
// [n, c, h, w] with the given per-sample shape.
nn::Tensor generate_batch(const nn::Model<float>& generator, std::size_t n, std::uint64_t seed,
                          const nn::Shape& image_shape);
nn::Tensor generate_batch(const nn::Model<float>& generator, std::size_t n, std::uint64_t seed);

// Per channel, a flag per frequency bin (row-major h x w) saying whether the
// bin is kept. One mask is shared by the whole batch.
struct FrequencyMask {
  std::size_t height = 0, width = 0;
  std::vector<std::vector<bool>> keep;  // [channel][bin]
};

FrequencyMask common_frequency_mask(const nn::Tensor& batch, const ReconstructionConfig& config);
nn::Tensor apply_frequency_mask(const nn::Tensor& batch, const FrequencyMask& mask);
nn::Tensor common_frequency_filter(const nn::Tensor& batch, const ReconstructionConfig& config);

// Blur then edge filter on one [c, h, w] image, every channel on its own.
nn::Tensor transform_image(const nn::Tensor& chw, const ReconstructionConfig& config);
// Pixel-wise lower median over the batch; [n, c, h, w] -> [c, h, w].
nn::Tensor pixel_median(const nn::Tensor& batch);
// transform_image on every sample, then pixel_median.
nn::Tensor reconstruct(const nn::Tensor& filtered, const ReconstructionConfig& config);

nn::Tensor postprocess(const nn::Model<float>& generator, const ReconstructionConfig& config);

// Little-endian float32 values preceded by the rank and extents as uint64.
void write_raw_tensor(const std::filesystem::path& path, const nn::Tensor& tensor);
nn::Tensor read_raw_tensor(const std::filesystem::path& path);

}  // namespace gamin::postproc

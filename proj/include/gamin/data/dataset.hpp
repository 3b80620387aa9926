#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gamin/nn/tensor.hpp"

namespace gamin::data {

enum class Split { train, test };

std::string_view to_string(Split split);

// Images are [n, channels, height, width] with pixel values in [-1, 1].
struct LabeledImageSet {
  nn::Tensor images;
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;
  std::vector<std::string> class_names;  // empty for IDX sources

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  nn::Shape image_shape() const { return {channels(), height(), width()}; }
};

// Affine map between pixel bytes [0, 255] and [-1, 1].
inline float normalize_pixel(std::uint8_t byte) { return static_cast<float>(byte / 127.5 - 1.0); }
std::uint8_t denormalize_pixel(float value);  // rounds and clamps

// Throws ShapeError unless counts agree, labels are below num_classes and
// every pixel lies in [-1, 1].
void validate(const LabeledImageSet& set);

// IDX files (big-endian). The string overload parses in-memory contents.
LabeledImageSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                         Split split = Split::train);
LabeledImageSet parse_idx(std::string_view images, std::string_view labels, Split split = Split::train);

// root/<class>/<image>. Class ids follow lexicographic directory order; files
// that fail to decode are skipped and reported through `skipped` and stderr.
LabeledImageSet load_image_folder(const std::filesystem::path& root, std::size_t height, std::size_t width,
                                  Split split = Split::train, std::vector<std::string>* skipped = nullptr);

LabeledImageSet subset(const LabeledImageSet& set, std::span<const std::size_t> indices);

// Seeded shuffle, then the first round(n * test_fraction) items form the test
// part. Returns {train, test}.
std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set, double test_fraction,
                                                  std::uint64_t seed);

// One-hot label matrix [n, num_classes].
nn::Tensor one_hot(std::span<const std::uint32_t> labels, std::size_t num_classes);

}  // namespace gamin::data

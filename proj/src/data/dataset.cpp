#include "gamin/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "gamin/data/image_io.hpp"

namespace gamin::data {

namespace fs = std::filesystem;

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::uint8_t denormalize_pixel(float value) {
  const double byte = std::round((static_cast<double>(value) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(byte, 0.0, 255.0));
}

void validate(const LabeledImageSet& set) {
  if (set.images.rank() != 4) {
    throw ShapeError("image set must be [n, channels, height, width], got " + nn::to_string(set.images.shape()));
  }
  if (set.images.rows() != set.labels.size()) {
    throw ShapeError(fmt::format("{} images but {} labels", set.images.rows(), set.labels.size()));
  }
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] >= set.num_classes) {
      throw ShapeError(fmt::format("label {} of item {} is outside [0, {})", set.labels[i], i, set.num_classes));
    }
  }
  for (float v : set.images.values()) {
    if (!(v >= -1.0f && v <= 1.0f)) throw ShapeError(fmt::format("pixel value {} outside [-1, 1]", v));
  }
}

namespace {

class BigEndianReader {
 public:
  BigEndianReader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32(const char* field) {
    if (bytes_.size() - pos_ < 4) {
      throw FormatError(fmt::format("{}: truncated while reading {}", name_, field), pos_);
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + i]);
    pos_ += 4;
    return v;
  }

  std::string_view payload(std::size_t count) {
    if (bytes_.size() - pos_ < count) {
      throw FormatError(fmt::format("{}: payload truncated, {} bytes declared but {} present", name_, count,
                                    bytes_.size() - pos_),
                        bytes_.size());
    }
    std::string_view out = bytes_.substr(pos_, count);
    pos_ += count;
    return out;
  }

  void expect_magic(std::uint32_t magic) {
    const std::uint32_t got = u32("magic");
    if (got != magic) {
      throw FormatError(fmt::format("{}: wrong magic 0x{:08x}, expected 0x{:08x}", name_, got, magic), 0);
    }
  }

 private:
  std::string_view bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

LabeledImageSet parse_idx(std::string_view images, std::string_view labels, Split split) {
  BigEndianReader img(images, "IDX image file");
  img.expect_magic(0x00000803);
  const std::size_t count = img.u32("item count");
  const std::size_t rows = img.u32("row count");
  const std::size_t cols = img.u32("column count");
  if (rows == 0 || cols == 0) throw FormatError("IDX image file: zero image extent", 8);

  BigEndianReader lab(labels, "IDX label file");
  lab.expect_magic(0x00000801);
  const std::size_t label_count = lab.u32("item count");
  if (label_count != count) {
    throw FormatError(fmt::format("IDX count mismatch: image file declares {} items, label file declares {}", count,
                                  label_count),
                      4);
  }

  const std::string_view pixels = img.payload(count * rows * cols);
  const std::string_view label_bytes = lab.payload(count);

  LabeledImageSet set;
  set.split = split;
  set.images = nn::Tensor({count, 1, rows, cols});
  for (std::size_t i = 0; i < pixels.size(); ++i) set.images[i] = normalize_pixel(static_cast<std::uint8_t>(pixels[i]));
  set.labels.resize(count);
  std::uint32_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    set.labels[i] = static_cast<std::uint8_t>(label_bytes[i]);
    max_label = std::max(max_label, set.labels[i]);
  }
  // IDX carries no class count; digit files always have ten.
  set.num_classes = std::max<std::size_t>(10, max_label + 1);
  return set;
}

LabeledImageSet load_idx(const fs::path& images, const fs::path& labels, Split split) {
  return parse_idx(read_file(images), read_file(labels), split);
}

LabeledImageSet load_image_folder(const fs::path& root, std::size_t height, std::size_t width, Split split,
                                  std::vector<std::string>* skipped) {
  if (!fs::is_directory(root)) throw IoError("image folder root " + root.string() + " is not a directory");
  if (height == 0 || width == 0) throw ShapeError("image folder resize target must be positive");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw FormatError("image folder " + root.string() + " has no class directories", 0);

  LabeledImageSet set;
  set.split = split;
  set.num_classes = class_dirs.size();
  std::vector<nn::Tensor> decoded;
  std::size_t channels = 0;
  for (std::uint32_t label = 0; label < class_dirs.size(); ++label) {
    set.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t kept = 0;
    for (const fs::path& file : files) {
      nn::Tensor image;
      try {
        image = read_image(file);
      } catch (const FormatError& e) {
        fmt::print(stderr, "warning: skipping {}: {}\n", file.string(), e.message());
        if (skipped) skipped->push_back(file.string());
        continue;
      }
      if (channels == 0) channels = image.dim(0);
      decoded.push_back(resize_bilinear(image, height, width));
      set.labels.push_back(label);
      ++kept;
    }
    if (kept == 0) {
      throw FormatError(fmt::format("class directory {} holds no decodable images", class_dirs[label].string()), 0);
    }
  }

  const std::size_t per = channels * height * width;
  set.images = nn::Tensor({decoded.size(), channels, height, width});
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const nn::Tensor& img = decoded[i];
    if (img.dim(0) == channels) {
      std::copy(img.values().begin(), img.values().end(), set.images.data() + i * per);
    } else if (img.dim(0) == 1) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        std::copy(img.values().begin(), img.values().end(), set.images.data() + i * per + ch * height * width);
      }
    } else {
      // colour image in a gray set: ITU-R 601 luma
      const std::size_t plane = height * width;
      for (std::size_t p = 0; p < plane; ++p) {
        set.images[i * per + p] = 0.299f * img[p] + 0.587f * img[plane + p] + 0.114f * img[2 * plane + p];
      }
    }
  }
  return set;
}

LabeledImageSet subset(const LabeledImageSet& set, std::span<const std::size_t> indices) {
  LabeledImageSet out;
  out.split = set.split;
  out.num_classes = set.num_classes;
  out.class_names = set.class_names;
  nn::Shape shape = set.images.shape();
  shape[0] = indices.size();
  out.images = nn::Tensor(shape);
  const std::size_t per = set.images.row_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= set.size()) throw ShapeError(fmt::format("subset index {} outside set of {}", src, set.size()));
    std::copy_n(set.images.data() + src * per, per, out.images.data() + i * per);
    out.labels.push_back(set.labels[src]);
  }
  return out;
}

std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set, double test_fraction,
                                                  std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw ConfigError(fmt::format("test fraction {} outside [0, 1]", test_fraction));
  }
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(set.size())));
  const std::span<const std::size_t> all(order);
  LabeledImageSet test = subset(set, all.first(n_test));
  LabeledImageSet train = subset(set, all.subspan(n_test));
  train.split = Split::train;
  test.split = Split::test;
  return {std::move(train), std::move(test)};
}

nn::Tensor one_hot(std::span<const std::uint32_t> labels, std::size_t num_classes) {
  nn::Tensor out({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw ShapeError(fmt::format("label {} outside {} classes", labels[i], num_classes));
    out[i * num_classes + labels[i]] = 1.0f;
  }
  return out;
}

}  // namespace gamin::data

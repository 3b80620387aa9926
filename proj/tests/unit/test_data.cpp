#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "gamin/data/dataset.hpp"
#include "gamin/data/image_io.hpp"

using namespace gamin;
using namespace gamin::data;
namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::string idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols, std::uint8_t fill = 0) {
  std::string out;
  put_u32(out, 0x00000803);
  put_u32(out, count);
  put_u32(out, rows);
  put_u32(out, cols);
  for (std::uint32_t i = 0; i < count * rows * cols; ++i) out.push_back(static_cast<char>(fill + i % 7));
  return out;
}

std::string idx_labels(std::uint32_t count) {
  std::string out;
  put_u32(out, 0x00000801);
  put_u32(out, count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(static_cast<char>(i % 10));
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gamin_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

nn::Tensor gray_image(std::size_t h, std::size_t w, float value) { return nn::Tensor({1, h, w}, value); }

}  // namespace

TEST_CASE("IDX parsing") {
  SUBCASE("a four-image file yields [4, 1, 28, 28]") {
    const auto set = parse_idx(idx_images(4, 28, 28), idx_labels(4));
    CHECK(set.images.shape() == nn::Shape{4, 1, 28, 28});
    CHECK(set.labels == std::vector<std::uint32_t>{0, 1, 2, 3});
    CHECK(set.num_classes == 10);
    validate(set);
  }
  SUBCASE("pixel endpoints map to -1 and +1") {
    std::string img;
    put_u32(img, 0x00000803);
    put_u32(img, 1);
    put_u32(img, 1);
    put_u32(img, 2);
    img.push_back(static_cast<char>(0));
    img.push_back(static_cast<char>(255));
    const auto set = parse_idx(img, idx_labels(1));
    CHECK(set.images[0] == -1.0f);
    CHECK(set.images[1] == 1.0f);
  }
  SUBCASE("count mismatch is rejected") {
    CHECK_THROWS_WITH_AS(parse_idx(idx_images(10, 2, 2), idx_labels(9)), doctest::Contains("count mismatch"),
                         FormatError);
  }
  SUBCASE("wrong magic names both values") {
    std::string img = idx_images(2, 2, 2);
    img[3] = 0x01;
    try {
      parse_idx(img, idx_labels(2));
      FAIL("accepted wrong magic");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
      CHECK(std::string(e.what()).find("0x00000803") != std::string::npos);
    }
  }
  SUBCASE("truncated payload reports the end offset") {
    std::string img = idx_images(3, 4, 4);
    img.resize(img.size() - 5);
    try {
      parse_idx(img, idx_labels(3));
      FAIL("accepted truncated payload");
    } catch (const FormatError& e) {
      CHECK(e.offset() == img.size());
    }
  }
  SUBCASE("truncated header") {
    CHECK_THROWS_AS(parse_idx(idx_images(1, 2, 2).substr(0, 9), idx_labels(1)), FormatError);
  }
}

TEST_CASE("pixel normalization is a bijection on the byte grid") {
  for (int b = 0; b <= 255; ++b) {
    const float v = normalize_pixel(static_cast<std::uint8_t>(b));
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
    CHECK(denormalize_pixel(v) == b);
  }
  CHECK(denormalize_pixel(7.0f) == 255);
  CHECK(denormalize_pixel(-7.0f) == 0);
}

TEST_CASE("image folder loading") {
  TempDir dir("folder");
  fs::create_directories(dir.path / "b");
  fs::create_directories(dir.path / "a");
  for (int i = 0; i < 3; ++i) write_png(dir.path / "a" / ("img" + std::to_string(i) + ".png"), gray_image(6, 5, -1.0f));
  for (int i = 0; i < 2; ++i) write_png(dir.path / "b" / ("img" + std::to_string(i) + ".png"), gray_image(6, 5, 0.5f));

  SUBCASE("classes follow lexicographic order") {
    const auto set = load_image_folder(dir.path, 6, 5);
    CHECK(set.size() == 5);
    CHECK(set.labels == std::vector<std::uint32_t>{0, 0, 0, 1, 1});
    CHECK(set.class_names == std::vector<std::string>{"a", "b"});
    CHECK(set.num_classes == 2);
    validate(set);
  }
  SUBCASE("a solid black image becomes all -1") {
    const auto set = load_image_folder(dir.path, 6, 5);
    for (std::size_t i = 0; i < 30; ++i) CHECK(set.images[i] == -1.0f);
  }
  SUBCASE("resizing to the same size is the identity") {
    nn::Tensor img({3, 4, 5});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = normalize_pixel(static_cast<std::uint8_t>((i * 37) % 256));
    write_png(dir.path / "a" / "colour.png", img);
    const nn::Tensor back = read_image(dir.path / "a" / "colour.png");
    CHECK(back == img);
    CHECK(resize_bilinear(back, 4, 5) == img);
  }
  SUBCASE("resizing changes extents and keeps the range") {
    const auto set = load_image_folder(dir.path, 12, 3);
    CHECK(set.images.shape() == nn::Shape{5, 1, 12, 3});
    for (std::size_t i = 0; i < 36; ++i) CHECK(set.images[i] == -1.0f);
    validate(set);
  }
  SUBCASE("undecodable files are skipped") {
    std::ofstream(dir.path / "b" / "broken.png") << "not an image";
    std::vector<std::string> skipped;
    const auto set = load_image_folder(dir.path, 6, 5, Split::train, &skipped);
    CHECK(set.size() == 5);
    REQUIRE(skipped.size() == 1);
    CHECK(skipped[0].find("broken.png") != std::string::npos);
  }
  SUBCASE("an empty class directory is rejected") {
    fs::create_directories(dir.path / "c");
    CHECK_THROWS_AS(load_image_folder(dir.path, 6, 5), FormatError);
  }
}

TEST_CASE("bilinear resize against a direct evaluation") {
  nn::Tensor img({1, 3, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 12.0f - 0.5f;
  const nn::Tensor out = resize_bilinear(img, 6, 8);
  // half-pixel centres, edge clamped
  auto sample = [&](double y, double x) {
    y = std::clamp(y, 0.0, 2.0);
    x = std::clamp(x, 0.0, 3.0);
    const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min<std::size_t>(y0 + 1, 2), x1 = std::min<std::size_t>(x0 + 1, 3);
    const double fy = y - y0, fx = x - x0;
    auto at = [&](std::size_t r, std::size_t c) { return static_cast<double>(img[r * 4 + c]); };
    return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
  };
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      const double expected = sample((y + 0.5) * 3.0 / 6.0 - 0.5, (x + 0.5) * 4.0 / 8.0 - 0.5);
      CHECK(out[y * 8 + x] == doctest::Approx(expected).epsilon(1e-3));
    }
  }
}

TEST_CASE("train/test split is a disjoint cover") {
  const auto set = parse_idx(idx_images(50, 2, 2), idx_labels(50));
  // tag each image with its index so items can be traced through the split
  auto tagged = set;
  for (std::size_t i = 0; i < 50; ++i) tagged.images[i * 4] = static_cast<float>(i) / 50.0f;
  const auto [train, test] = split(tagged, 0.2, 11);
  CHECK(train.size() == 40);
  CHECK(test.size() == 10);
  CHECK(train.split == Split::train);
  CHECK(test.split == Split::test);
  std::multiset<float> seen;
  for (std::size_t i = 0; i < train.size(); ++i) seen.insert(train.images[i * 4]);
  for (std::size_t i = 0; i < test.size(); ++i) seen.insert(test.images[i * 4]);
  CHECK(seen.size() == 50);
  CHECK(std::set<float>(seen.begin(), seen.end()).size() == 50);
  const auto again = split(tagged, 0.2, 11);
  CHECK(again.first.images == train.images);
}

TEST_CASE("one-hot rows") {
  const std::vector<std::uint32_t> labels{2, 0};
  const nn::Tensor y = one_hot(labels, 3);
  CHECK(y.values()[2] == 1.0f);
  CHECK(y.values()[3] == 1.0f);
  CHECK(std::accumulate(y.values().begin(), y.values().end(), 0.0f) == 2.0f);
  CHECK_THROWS_AS(one_hot(std::vector<std::uint32_t>{3}, 3), ShapeError);
}

TEST_CASE("MNIST files load when present") {
  const fs::path root = GAMIN_MNIST_DIR;
  if (!fs::exists(root / "t10k-images-idx3-ubyte")) {
    MESSAGE("MNIST not found under " << root << ", skipped");
    return;
  }
  const auto test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", Split::test);
  CHECK(test.images.shape() == nn::Shape{10000, 1, 28, 28});
  CHECK(test.num_classes == 10);
  validate(test);
}

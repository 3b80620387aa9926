#include "gamin/data/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gamin/data/dataset.hpp"

namespace gamin::data {

namespace {

// OpenCV stores colour as interleaved BGR.
nn::Tensor from_mat(const cv::Mat& mat) {
  const auto c = static_cast<std::size_t>(mat.channels());
  const auto h = static_cast<std::size_t>(mat.rows);
  const auto w = static_cast<std::size_t>(mat.cols);
  nn::Tensor out({c, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const std::uint8_t* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t src = c == 3 ? 2 - ch : ch;
        out[(ch * h + y) * w + x] = normalize_pixel(row[x * c + src]);
      }
    }
  }
  return out;
}

}  // namespace

nn::Tensor read_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw FormatError("cannot decode image " + path.string(), 0);
  if (raw.depth() != CV_8U) {
    cv::Mat scaled;
    const double factor = raw.depth() == CV_16U ? 1.0 / 257.0 : 1.0;
    raw.convertTo(scaled, CV_8U, factor);
    raw = scaled;
  }
  cv::Mat mat;
  switch (raw.channels()) {
    case 1:
    case 3:
      mat = raw;
      break;
    case 2:
      cv::extractChannel(raw, mat, 0);
      break;
    case 4:
      cv::cvtColor(raw, mat, cv::COLOR_BGRA2BGR);
      break;
    default:
      throw FormatError(fmt::format("unsupported channel count {} in {}", raw.channels(), path.string()), 0);
  }
  return from_mat(mat);
}

nn::Tensor resize_bilinear(const nn::Tensor& chw, std::size_t height, std::size_t width) {
  if (chw.rank() != 3) throw ShapeError("resize expects [channels, height, width], got " + nn::to_string(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == height && w == width) return chw;
  nn::Tensor out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const cv::Mat src(static_cast<int>(h), static_cast<int>(w), CV_32F,
                      const_cast<float*>(chw.data() + ch * h * w));
    cv::Mat dst(static_cast<int>(height), static_cast<int>(width), CV_32F, out.data() + ch * height * width);
    cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  }
  for (float& v : out.values()) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

void write_png(const std::filesystem::path& path, const nn::Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw ShapeError("PNG output expects [1 or 3, height, width], got " + nn::to_string(chw.shape()));
  }
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  cv::Mat mat(static_cast<int>(h), static_cast<int>(w), c == 3 ? CV_8UC3 : CV_8UC1);
  for (std::size_t y = 0; y < h; ++y) {
    std::uint8_t* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t dst = c == 3 ? 2 - ch : ch;
        row[x * c + dst] = denormalize_pixel(chw[(ch * h + y) * w + x]);
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw IoError("cannot write " + path.string());
}

}  // namespace gamin::data

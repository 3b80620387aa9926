#pragma once

#include <cstddef>
#include <filesystem>

#include "gamin/nn/tensor.hpp"

namespace gamin::data {

// Decodes an image file into [channels, height, width] in [-1, 1]. Gray files
// give one channel, colour files three (alpha is dropped). Throws FormatError
// when the file cannot be decoded.
nn::Tensor read_image(const std::filesystem::path& path);

// Bilinear resampling with half-pixel centres; same-size input is returned
// unchanged.
nn::Tensor resize_bilinear(const nn::Tensor& chw, std::size_t height, std::size_t width);

// Writes [channels, height, width] values through [-1, 1] -> [0, 255]
// (clamped) as PNG. One or three channels.
void write_png(const std::filesystem::path& path, const nn::Tensor& chw);

}  // namespace gamin::data

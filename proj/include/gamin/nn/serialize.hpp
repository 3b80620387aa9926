#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "gamin/nn/model.hpp"

namespace gamin::nn {

inline constexpr std::string_view kModelMagic = "GAMINMDL1";

// Container layout: the magic line, a textual header (input shape, output
// dimension, seed, one line per layer: kind, size parameters, activation),
// a "params <count>" line, then every parameter as a little-endian float32,
// layer by layer, weights before biases.
std::string serialize(const ArchitectureSpec& spec, const ModelParams<float>& params);

// Throws FormatError carrying the byte offset of the first inconsistency.
Model<float> deserialize(std::string_view bytes);

void save_model(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_model(const std::filesystem::path& path);

}  // namespace gamin::nn

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "distlab/model.hpp"

namespace distlab {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Layout on disk:
///   8 bytes   magic "DLABCKPT"
///   8 bytes   little-endian u64 header length H
///   H bytes   JSON header: format_version, model_config, tokenizer_hash,
///             metadata, tensors {name: {offset, shape}}; offsets are bytes
///             from the start of the payload
///   payload   little-endian f32 tensors, row-major, in header order
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  ModelConfig config;
  ModelParams<float> params;
  std::string tokenizer_hash;
  nlohmann::json metadata = nlohmann::json::object();
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// True when every tensor matches bit for bit.
bool params_bit_equal(const ModelParams<float>& a, const ModelParams<float>& b);

}  // namespace distlab

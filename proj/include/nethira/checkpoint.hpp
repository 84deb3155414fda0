#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nethira/model.hpp"

namespace nethira {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Learnable parameters plus everything needed to rebuild the model.
///
/// File layout (all integers little-endian):
///   bytes 0..7    magic "NTHRCKPT"
///   bytes 8..11   u32 format version
///   bytes 12..19  u64 header length H
///   next H bytes  JSON header: {"config", "step", "rng_state", "tensors": [{name, rows, cols}]}
///   payload       each tensor in header order, rows*cols float64, row-major
struct ModelCheckpoint {
  ModelConfig config;
  std::vector<NamedTensor> parameters;
  std::uint64_t step = 0;
  std::string rng_state;

  static ModelCheckpoint from_model(const Model& model, std::uint64_t step = 0,
                                    std::string rng_state = {});
  Model to_model() const;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt);
/// Throws Error{kCorruptFile} for bad magic or truncation and
/// Error{kVersionMismatch} for an unknown format version.
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> data);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nethira

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cgmlp/cifar.hpp"
#include "cgmlp/model.hpp"

// Binary layout (little-endian):
//   "CGMLP1\0"                      7 bytes
//   u32 version = 1
//   u32 length, config text         ModelConfig::to_text()
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], f32 payload
//   u32 channel count (3), f32 mean[3], f32 stddev[3]
namespace cgmlp {

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class UnsupportedVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TensorMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[7] = {'C', 'G', 'M', 'L', 'P', '1', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  data::NormStats norm_stats;
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const data::NormStats& stats);

// Rebuilds the model from the embedded config, then loads every tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads tensors into an existing model, checking names and shapes against
// its own parameter list. Returns the stored normalization statistics.
data::NormStats load_into(Model<float>& model, const std::filesystem::path& path);

// FNV-1a of the file bytes, hex encoded; identifies a checkpoint in logs.
std::string checkpoint_id(const std::filesystem::path& path);

}  // namespace cgmlp

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cgmlp/model.hpp"
#include "cgmlp/tensor.hpp"

namespace cgmlp::data {

class DataError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kPixelsPerImage = 3 * 32 * 32;
inline constexpr std::size_t kCifar10RecordSize = 1 + kPixelsPerImage;
inline constexpr std::size_t kCifar100RecordSize = 2 + kPixelsPerImage;

struct NormStats {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stddev{1.f, 1.f, 1.f};

  bool operator==(const NormStats&) const = default;
};

struct Dataset {
  DatasetKind kind = DatasetKind::kCifar10;
  Tensor<float> images;  // [N x 3 x 32 x 32]; [0, 1] until normalized
  std::vector<int> labels;         // fine labels for CIFAR-100
  std::vector<int> coarse_labels;  // CIFAR-100 only
  NormStats norm_stats;
  bool normalized = false;

  std::size_t size() const { return labels.size(); }
  int num_classes() const { return num_classes_of(kind); }
};

// Parses one file of records. Throws DataError when the file is missing, its
// size is not a multiple of the record size, or a label is out of range.
Dataset load_cifar_file(const std::filesystem::path& file, DatasetKind kind);

// CIFAR-10: data_batch_1..5.bin (train) or test_batch.bin (test).
// CIFAR-100: train.bin or test.bin.
Dataset load_cifar(const std::filesystem::path& dir, DatasetKind kind, bool train = true);

// Inverse of parsing for record `i`: label byte(s) followed by 3072 pixel
// bytes in R, G, B plane order. Requires an unnormalized dataset.
std::vector<std::uint8_t> encode_record(const Dataset& ds, std::size_t i);

// Writes a dataset back in the binary record format (used for fixtures).
void write_cifar_file(const std::filesystem::path& file, const Dataset& ds);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

NormStats compute_norm_stats(const Dataset& ds);

// Standardizes in place with `stats`. Throws DataError on a dataset that is
// already normalized.
void normalize(Dataset& ds, const NormStats& stats);

// Deterministic shuffle under `seed`; the train part's statistics normalize
// both halves. 0 < val_fraction < 1.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            std::uint64_t seed);

// Index form of the split, exposed for set-algebra checks.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double val_fraction, std::uint64_t seed);

struct BatchPlan {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool drop_last = false;
  bool shuffle = true;
};

// Sample order for one epoch, cut into batches. The shuffle is reseeded
// from (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const BatchPlan& plan,
                                                    std::size_t epoch);

struct Batch {
  Tensor<float> images;  // [B x 3 x 32 x 32]
  std::vector<int> labels;
};

Batch gather_batch(const Dataset& ds, std::span<const std::size_t> indices);

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan, std::size_t epoch);

}  // namespace cgmlp::data

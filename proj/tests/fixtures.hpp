#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgmlp/cifar.hpp"
#include "cgmlp/rng.hpp"
#include "cgmlp/tensor.hpp"

namespace fixtures {

// Unique directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cgmlp");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
cgmlp::Tensor<T> random_tensor(const cgmlp::Shape& shape, cgmlp::Rng& rng, double scale = 1.0) {
  std::vector<T> v(cgmlp::numel(shape));
  for (T& x : v) x = static_cast<T>(rng.normal(0.0, scale));
  return cgmlp::Tensor<T>(shape, std::move(v));
}

// Byte-valued images (stored as byte / 255) with labels. When `prototypes`
// is set, every class has a fixed random template and samples are that
// template plus bounded noise, which makes the task learnable. Templates are
// fixed per dataset kind; `seed` drives labels and noise.
cgmlp::data::Dataset synthetic_dataset(cgmlp::DatasetKind kind, std::size_t n, std::uint64_t seed,
                                       bool prototypes = true);

// Writes a complete CIFAR directory (all expected file names) with
// `per_file` records in each training file and `test` records in the test
// file.
void write_synthetic_cifar(const std::filesystem::path& dir, cgmlp::DatasetKind kind,
                           std::size_t per_file, std::size_t test, std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);

}  // namespace fixtures

#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>

namespace fixtures {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() /
          (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

cgmlp::data::Dataset synthetic_dataset(cgmlp::DatasetKind kind, std::size_t n, std::uint64_t seed,
                                       bool prototypes) {
  using cgmlp::data::kPixelsPerImage;
  const int classes = cgmlp::num_classes_of(kind);
  // Templates depend only on the kind, so files written with different
  // seeds describe the same task.
  cgmlp::Rng task(static_cast<std::uint64_t>(classes));
  std::vector<std::vector<int>> templates(static_cast<std::size_t>(classes),
                                          std::vector<int>(kPixelsPerImage));
  for (auto& t : templates) {
    for (int& v : t) v = static_cast<int>(task.below(256));
  }
  cgmlp::Rng rng(seed);
  cgmlp::data::Dataset ds;
  ds.kind = kind;
  std::vector<float> pixels(n * kPixelsPerImage);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    ds.labels.push_back(label);
    if (kind == cgmlp::DatasetKind::kCifar100) ds.coarse_labels.push_back(label / 5);
    for (std::size_t p = 0; p < kPixelsPerImage; ++p) {
      int byte;
      if (prototypes) {
        const int noise = static_cast<int>(rng.below(41)) - 20;
        byte = std::clamp(templates[static_cast<std::size_t>(label)][p] + noise, 0, 255);
      } else {
        byte = static_cast<int>(rng.below(256));
      }
      pixels[i * kPixelsPerImage + p] = static_cast<float>(byte) / 255.0f;
    }
  }
  ds.images = cgmlp::Tensor<float>({n, 3, 32, 32}, std::move(pixels));
  return ds;
}

void write_synthetic_cifar(const fs::path& dir, cgmlp::DatasetKind kind, std::size_t per_file,
                           std::size_t test, std::uint64_t seed) {
  fs::create_directories(dir);
  if (kind == cgmlp::DatasetKind::kCifar10) {
    for (int i = 1; i <= 5; ++i) {
      cgmlp::data::write_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"),
                                    synthetic_dataset(kind, per_file, seed + static_cast<std::uint64_t>(i)));
    }
    cgmlp::data::write_cifar_file(dir / "test_batch.bin", synthetic_dataset(kind, test, seed + 100));
  } else {
    cgmlp::data::write_cifar_file(dir / "train.bin", synthetic_dataset(kind, per_file * 5, seed));
    cgmlp::data::write_cifar_file(dir / "test.bin", synthetic_dataset(kind, test, seed + 100));
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace fixtures

#include "cgmlp/cifar.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "cgmlp/rng.hpp"

namespace cgmlp::data {
namespace {

std::size_t record_size(DatasetKind kind) {
  return kind == DatasetKind::kCifar10 ? kCifar10RecordSize : kCifar100RecordSize;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open CIFAR file " + file.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

Dataset concat(std::vector<Dataset>&& parts, DatasetKind kind) {
  Dataset out;
  out.kind = kind;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<float> pixels;
  pixels.reserve(total * kPixelsPerImage);
  for (auto& p : parts) {
    pixels.insert(pixels.end(), p.images.data().begin(), p.images.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.coarse_labels.insert(out.coarse_labels.end(), p.coarse_labels.begin(),
                             p.coarse_labels.end());
    p = Dataset{};
  }
  out.images = Tensor<float>({total, 3, 32, 32}, std::move(pixels));
  return out;
}

}  // namespace

Dataset load_cifar_file(const std::filesystem::path& file, DatasetKind kind) {
  const std::vector<std::uint8_t> bytes = read_file(file);
  const std::size_t rec = record_size(kind);
  if (bytes.empty() || bytes.size() % rec != 0) {
    throw DataError("CIFAR file " + file.string() + " has " + std::to_string(bytes.size()) +
                    " bytes, not a positive multiple of the " + std::to_string(rec) +
                    "-byte record size");
  }
  const std::size_t n = bytes.size() / rec;
  const int classes = num_classes_of(kind);
  Dataset ds;
  ds.kind = kind;
  ds.labels.resize(n);
  if (kind == DatasetKind::kCifar100) ds.coarse_labels.resize(n);
  std::vector<float> pixels(n * kPixelsPerImage);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* r = bytes.data() + i * rec;
    int label;
    if (kind == DatasetKind::kCifar10) {
      label = r[0];
    } else {
      if (r[0] >= 20) {
        throw DataError("CIFAR-100 record " + std::to_string(i) + " in " + file.string() +
                        ": coarse label " + std::to_string(r[0]) + " out of range");
      }
      ds.coarse_labels[i] = r[0];
      label = r[1];
    }
    if (label >= classes) {
      throw DataError("record " + std::to_string(i) + " in " + file.string() + ": label " +
                      std::to_string(label) + " out of range [0, " + std::to_string(classes) +
                      ")");
    }
    ds.labels[i] = label;
    const std::uint8_t* px = r + (rec - kPixelsPerImage);
    float* dst = pixels.data() + i * kPixelsPerImage;
    for (std::size_t p = 0; p < kPixelsPerImage; ++p) dst[p] = static_cast<float>(px[p]) / 255.0f;
  }
  ds.images = Tensor<float>({n, 3, 32, 32}, std::move(pixels));
  return ds;
}

Dataset load_cifar(const std::filesystem::path& dir, DatasetKind kind, bool train) {
  std::vector<std::string> files;
  if (kind == DatasetKind::kCifar10) {
    if (train) {
      for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
      files.push_back("test_batch.bin");
    }
  } else {
    files.push_back(train ? "train.bin" : "test.bin");
  }
  std::vector<Dataset> parts;
  for (const auto& f : files) {
    const auto path = dir / f;
    if (!std::filesystem::exists(path)) throw DataError("missing CIFAR file " + path.string());
    parts.push_back(load_cifar_file(path, kind));
  }
  return concat(std::move(parts), kind);
}

std::vector<std::uint8_t> encode_record(const Dataset& ds, std::size_t i) {
  if (ds.normalized) throw DataError("encode_record: dataset is normalized");
  std::vector<std::uint8_t> out;
  out.reserve(record_size(ds.kind));
  if (ds.kind == DatasetKind::kCifar100) {
    out.push_back(static_cast<std::uint8_t>(ds.coarse_labels.at(i)));
  }
  out.push_back(static_cast<std::uint8_t>(ds.labels.at(i)));
  const float* px = ds.images.raw() + i * kPixelsPerImage;
  for (std::size_t p = 0; p < kPixelsPerImage; ++p) {
    out.push_back(static_cast<std::uint8_t>(std::lround(px[p] * 255.0f)));
  }
  return out;
}

void write_cifar_file(const std::filesystem::path& file, const Dataset& ds) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write CIFAR file " + file.string());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto rec = encode_record(ds, i);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw DataError("write failed for " + file.string());
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.kind = ds.kind;
  out.norm_stats = ds.norm_stats;
  out.normalized = ds.normalized;
  std::vector<float> pixels(indices.size() * kPixelsPerImage);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= ds.size()) throw DataError("subset index " + std::to_string(i) + " out of range");
    std::copy_n(ds.images.raw() + i * kPixelsPerImage, kPixelsPerImage,
                pixels.begin() + static_cast<std::ptrdiff_t>(k * kPixelsPerImage));
    out.labels.push_back(ds.labels[i]);
    if (!ds.coarse_labels.empty()) out.coarse_labels.push_back(ds.coarse_labels[i]);
  }
  if (!indices.empty()) out.images = Tensor<float>({indices.size(), 3, 32, 32}, std::move(pixels));
  return out;
}

NormStats compute_norm_stats(const Dataset& ds) {
  if (ds.size() == 0) throw DataError("compute_norm_stats: empty dataset");
  NormStats s;
  const std::size_t plane = 32 * 32;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const float* p = ds.images.raw() + i * kPixelsPerImage + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(ds.size() * plane);
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    s.mean[c] = static_cast<float>(mean);
    s.stddev[c] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return s;
}

void normalize(Dataset& ds, const NormStats& stats) {
  if (ds.normalized) throw DataError("normalize: dataset is already normalized");
  if (ds.size() > 0) {
    // Fresh buffer: subsets and callers may share the unnormalized storage.
    Tensor<float> out = ds.images.clone();
    auto v = out.mutable_data();
    const std::size_t plane = 32 * 32;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        float* p = v.data() + i * kPixelsPerImage + c * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - stats.mean[c]) / stats.stddev[c];
      }
    }
    ds.images = std::move(out);
  }
  ds.norm_stats = stats;
  ds.normalized = true;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw DataError("split_train_val: val_fraction must lie in (0, 1), got " +
                    std::to_string(val_fraction));
  }
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw DataError("split_train_val: fraction " + std::to_string(val_fraction) + " of " +
                    std::to_string(n) + " samples leaves an empty split");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            std::uint64_t seed) {
  if (ds.normalized) throw DataError("split_train_val: expects an unnormalized dataset");
  auto [train_idx, val_idx] = split_indices(ds.size(), val_fraction, seed);
  Dataset train = subset(ds, train_idx);
  Dataset val = subset(ds, val_idx);
  const NormStats stats = compute_norm_stats(train);
  normalize(train, stats);
  normalize(val, stats);
  return {std::move(train), std::move(val)};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, const BatchPlan& plan,
                                                    std::size_t epoch) {
  if (plan.batch_size == 0) throw DataError("batch size must be positive");
  if (plan.batch_size > n) {
    throw DataError("batch size " + std::to_string(plan.batch_size) + " exceeds dataset size " +
                    std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (plan.shuffle) {
    Rng rng(mix_seed(plan.seed, epoch));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += plan.batch_size) {
    const std::size_t end = std::min(n, start + plan.batch_size);
    if (end - start < plan.batch_size && plan.drop_last) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch gather_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  std::vector<float> pixels(indices.size() * kPixelsPerImage);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(ds.images.raw() + indices[k] * kPixelsPerImage, kPixelsPerImage,
                pixels.begin() + static_cast<std::ptrdiff_t>(k * kPixelsPerImage));
    b.labels.push_back(ds.labels[indices[k]]);
  }
  b.images = Tensor<float>({indices.size(), 3, 32, 32}, std::move(pixels));
  return b;
}

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan, std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : epoch_batches(ds.size(), plan, epoch)) out.push_back(gather_batch(ds, idx));
  return out;
}

}  // namespace cgmlp::data

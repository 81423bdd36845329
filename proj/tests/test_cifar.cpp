#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "cgmlp/cifar.hpp"
#include "fixtures.hpp"

using namespace cgmlp;
using namespace cgmlp::data;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(CifarFile, ParsesHandWrittenRecords) {
  fixtures::TempDir dir;
  std::vector<std::uint8_t> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<std::uint8_t>(7 - r));
    for (std::size_t p = 0; p < kPixelsPerImage; ++p) bytes.push_back(static_cast<std::uint8_t>((p + r) % 256));
  }
  write_bytes(dir / "f.bin", bytes);
  auto ds = load_cifar_file(dir / "f.bin", DatasetKind::kCifar10);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 6}));
  EXPECT_EQ(ds.images.shape(), (Shape{2, 3, 32, 32}));
  // Pixel 1024 is the first byte of the green plane.
  EXPECT_FLOAT_EQ(ds.images.at({0, 1, 0, 0}), static_cast<float>(1024 % 256) / 255.0f);
  EXPECT_FLOAT_EQ(ds.images.at({1, 2, 31, 31}), static_cast<float>((3071 + 1) % 256) / 255.0f);
  EXPECT_FALSE(ds.normalized);
}

TEST(CifarFile, Cifar100HasCoarseThenFineLabel) {
  fixtures::TempDir dir;
  std::vector<std::uint8_t> bytes{3, 42};
  bytes.resize(kCifar100RecordSize, 128);
  write_bytes(dir / "f.bin", bytes);
  auto ds = load_cifar_file(dir / "f.bin", DatasetKind::kCifar100);
  EXPECT_EQ(ds.labels, (std::vector<int>{42}));
  EXPECT_EQ(ds.coarse_labels, (std::vector<int>{3}));
}

TEST(CifarFile, RejectsMalformedFiles) {
  fixtures::TempDir dir;
  EXPECT_THROW(load_cifar_file(dir / "missing.bin", DatasetKind::kCifar10), DataError);
  std::vector<std::uint8_t> bytes(kCifar10RecordSize * 2 - 5, 0);
  write_bytes(dir / "trunc.bin", bytes);
  EXPECT_THROW(load_cifar_file(dir / "trunc.bin", DatasetKind::kCifar10), DataError);
  std::vector<std::uint8_t> bad(kCifar10RecordSize, 0);
  bad[0] = 10;
  write_bytes(dir / "label.bin", bad);
  EXPECT_THROW(load_cifar_file(dir / "label.bin", DatasetKind::kCifar10), DataError);
}

TEST(CifarFile, EncodeRecordReproducesFileBytes) {
  fixtures::TempDir dir;
  for (auto kind : {DatasetKind::kCifar10, DatasetKind::kCifar100}) {
    auto ds = fixtures::synthetic_dataset(kind, 5, 3, false);
    write_cifar_file(dir / "f.bin", ds);
    const auto file = fixtures::read_file(dir / "f.bin");
    auto back = load_cifar_file(dir / "f.bin", kind);
    const std::size_t rec = kind == DatasetKind::kCifar10 ? kCifar10RecordSize : kCifar100RecordSize;
    ASSERT_EQ(file.size(), 5 * rec);
    for (std::size_t i = 0; i < 5; ++i) {
      auto enc = encode_record(back, i);
      ASSERT_EQ(enc.size(), rec);
      EXPECT_TRUE(std::equal(enc.begin(), enc.end(),
                             reinterpret_cast<const std::uint8_t*>(file.data()) + i * rec));
    }
  }
}

TEST(CifarDir, LoadsAllExpectedFiles) {
  fixtures::TempDir dir;
  fixtures::write_synthetic_cifar(dir.path(), DatasetKind::kCifar10, 4, 3, 1);
  EXPECT_EQ(load_cifar(dir.path(), DatasetKind::kCifar10, true).size(), 20u);
  EXPECT_EQ(load_cifar(dir.path(), DatasetKind::kCifar10, false).size(), 3u);
  std::filesystem::remove(dir / "data_batch_3.bin");
  EXPECT_THROW(load_cifar(dir.path(), DatasetKind::kCifar10, true), DataError);

  fixtures::TempDir d100;
  fixtures::write_synthetic_cifar(d100.path(), DatasetKind::kCifar100, 2, 3, 1);
  auto tr = load_cifar(d100.path(), DatasetKind::kCifar100, true);
  EXPECT_EQ(tr.size(), 10u);
  EXPECT_EQ(tr.coarse_labels.size(), 10u);
}

TEST(Normalize, StatsAndStandardization) {
  auto ds = fixtures::synthetic_dataset(DatasetKind::kCifar10, 20, 4, false);
  auto stats = compute_norm_stats(ds);
  normalize(ds, stats);
  EXPECT_TRUE(ds.normalized);
  EXPECT_THROW(normalize(ds, stats), DataError);
  EXPECT_THROW(encode_record(ds, 0), DataError);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    const std::size_t n = 20 * 1024;
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t k = 0; k < 1024; ++k) {
        const double v = ds.images.raw()[i * kPixelsPerImage + c * 1024 + k];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / n, 0.0, 1e-4);
    EXPECT_NEAR(s2 / n, 1.0, 1e-3);
  }
}

TEST(Normalize, DoesNotTouchSharedStorage) {
  auto ds = fixtures::synthetic_dataset(DatasetKind::kCifar10, 4, 5, false);
  const float before = ds.images.data()[0];
  std::vector<std::size_t> idx{0, 1, 2, 3};
  auto copy = subset(ds, idx);
  normalize(copy, compute_norm_stats(copy));
  EXPECT_EQ(ds.images.data()[0], before);
}

TEST(Split, PartitionAlgebra) {
  auto [train, val] = split_indices(50000, 0.1, 7);
  EXPECT_EQ(train.size(), 45000u);
  EXPECT_EQ(val.size(), 5000u);
  std::vector<std::size_t> all(train);
  all.insert(all.end(), val.begin(), val.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  auto again = split_indices(50000, 0.1, 7);
  EXPECT_EQ(again.second, val);
  EXPECT_NE(split_indices(50000, 0.1, 8).second, val);
  EXPECT_THROW(split_indices(10, 0.0, 1), DataError);
  EXPECT_THROW(split_indices(10, 1.0, 1), DataError);
  EXPECT_THROW(split_indices(3, 0.1, 1), DataError);
}

TEST(Split, UsesTrainStatisticsForBoth) {
  auto ds = fixtures::synthetic_dataset(DatasetKind::kCifar10, 40, 6, false);
  auto [train, val] = split_train_val(ds, 0.25, 2);
  EXPECT_EQ(train.size(), 30u);
  EXPECT_EQ(val.size(), 10u);
  EXPECT_EQ(train.norm_stats, val.norm_stats);
  auto [ti, vi] = split_indices(40, 0.25, 2);
  EXPECT_EQ(train.norm_stats, compute_norm_stats(subset(ds, ti)));
  EXPECT_EQ(val.labels[0], ds.labels[vi[0]]);
}

TEST(Batches, CoverEveryIndexOncePerEpoch) {
  BatchPlan plan{4, 9, false, true};
  auto b = epoch_batches(10, plan, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[2].size(), 2u);
  std::vector<std::size_t> seen;
  for (auto& x : b) seen.insert(seen.end(), x.begin(), x.end());
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> expect(10);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(seen, expect);

  plan.drop_last = true;
  EXPECT_EQ(epoch_batches(10, plan, 0).size(), 2u);
  EXPECT_EQ(epoch_batches(10, plan, 0), epoch_batches(10, plan, 0));
  EXPECT_NE(epoch_batches(10, plan, 0), epoch_batches(10, plan, 1));
  plan.shuffle = false;
  EXPECT_EQ(epoch_batches(10, plan, 3)[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  plan.batch_size = 11;
  EXPECT_THROW(epoch_batches(10, plan, 0), DataError);
}

TEST(Batches, GatherCopiesTheRightImages) {
  auto ds = fixtures::synthetic_dataset(DatasetKind::kCifar10, 6, 10, false);
  std::vector<std::size_t> idx{4, 1};
  auto b = gather_batch(ds, idx);
  EXPECT_EQ(b.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.labels, (std::vector<int>{ds.labels[4], ds.labels[1]}));
  for (std::size_t k = 0; k < kPixelsPerImage; ++k) {
    ASSERT_EQ(b.images.raw()[k], ds.images.raw()[4 * kPixelsPerImage + k]);
    ASSERT_EQ(b.images.raw()[kPixelsPerImage + k], ds.images.raw()[kPixelsPerImage + k]);
  }
  auto all = batches(ds, BatchPlan{3, 1, false, true}, 0);
  EXPECT_EQ(all.size(), 2u);
}

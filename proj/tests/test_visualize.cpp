#include <gtest/gtest.h>

#include "cgmlp/visualize.hpp"
#include "fixtures.hpp"

using namespace cgmlp;
using namespace cgmlp::viz;

namespace {

Model<float> small_cgmlp2() {
  auto cfg = ModelConfig::preset("cgmlp2", DatasetKind::kCifar10);
  cfg.set_width(16);
  cfg.stem_channels = {4, 8};
  return Model<float>::build(cfg);
}

}  // namespace

TEST(Capture, ShapesAndMetadata) {
  Rng rng(1);
  auto m = small_cgmlp2();
  auto img = fixtures::random_tensor<float>({1, 3, 32, 32}, rng);
  auto caps = capture_feature_maps(m, img, m.tap_names(), 7, "abc");
  ASSERT_EQ(caps.size(), 4u);
  EXPECT_EQ(caps[0].snapshot.shape(), (Shape{4, 32, 32}));
  EXPECT_EQ(caps[1].snapshot.shape(), (Shape{4, 16, 16}));
  EXPECT_EQ(caps[2].snapshot.shape(), (Shape{8, 16, 16}));
  EXPECT_EQ(caps[3].snapshot.shape(), (Shape{8, 8, 8}));
  EXPECT_EQ(caps[3].image_index, 7u);
  EXPECT_EQ(caps[3].checkpoint_id, "abc");
  EXPECT_THROW(capture_feature_maps(m, img, {"stem.9.act"}), Error);
  EXPECT_THROW(capture_feature_maps(m, fixtures::random_tensor<float>({2, 3, 32, 32}, rng), {"stem.0.act"}),
               ShapeError);
}

TEST(Capture, DoesNotChangeLogits) {
  Rng rng(2);
  auto m = small_cgmlp2();
  auto img = fixtures::random_tensor<float>({1, 3, 32, 32}, rng);
  auto before = m.forward(img);
  capture_feature_maps(m, img, m.tap_names());
  nn::FeatureTaps<float> taps;
  auto during = m.forward(img, &taps);
  auto after = m.forward(img);
  for (std::size_t i = 0; i < before.numel(); ++i) {
    EXPECT_EQ(before.data()[i], during.data()[i]);
    EXPECT_EQ(before.data()[i], after.data()[i]);
  }
}

TEST(Capture, ZeroImageGivesSpatiallyConstantFirstActivation) {
  auto m = small_cgmlp2();
  auto caps = capture_feature_maps(m, Tensor<float>::zeros({1, 3, 32, 32}), {"stem.0.act"});
  const auto& s = caps[0].snapshot;
  for (std::size_t c = 0; c < 4; ++c) {
    const float v = s.at({c, 0, 0});
    for (std::size_t i = 0; i < 32 * 32; ++i) ASSERT_EQ(s.raw()[c * 1024 + i], v);
  }
}

TEST(ChannelImage, MinMaxScalingAndConstantChannel) {
  Tensor<float> snap({2, 2, 2}, {0.f, 1.f, 2.f, 4.f, 3.f, 3.f, 3.f, 3.f});
  auto a = channel_image(snap, 0);
  EXPECT_EQ(a.width, 2u);
  EXPECT_EQ(a.pixels, (std::vector<std::uint8_t>{0, 64, 128, 255}));
  auto b = channel_image(snap, 1);
  EXPECT_EQ(b.pixels, (std::vector<std::uint8_t>{0, 0, 0, 0}));
  EXPECT_THROW(channel_image(snap, 2), ShapeError);
}

TEST(Pgm, EncodeParseRoundTrip) {
  PgmImage img{3, 2, {0, 10, 255, 7, 8, 9}};
  const auto bytes = encode_pgm(img);
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 6u);
  auto back = parse_pgm(bytes);
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_EQ(encode_pgm(back), bytes);
  EXPECT_THROW(parse_pgm("P2\n3 2\n255\n"), Error);
  EXPECT_THROW(parse_pgm(bytes.substr(0, bytes.size() - 1)), Error);
}

TEST(Export, OneFilePerChannelAndFilesReparse) {
  fixtures::TempDir dir;
  Rng rng(3);
  auto m = small_cgmlp2();
  auto caps = capture_feature_maps(m, fixtures::random_tensor<float>({1, 3, 32, 32}, rng), m.tap_names());
  std::size_t total = 0;
  for (const auto& fc : caps) {
    auto files = export_channel_images(fc, dir / "fm");
    ASSERT_EQ(files.size(), fc.snapshot.dim(0));
    total += files.size();
    EXPECT_EQ(files[0].filename().string(), fc.layer + "_000.pgm");
    for (std::size_t c = 0; c < files.size(); ++c) {
      const auto bytes = fixtures::read_file(files[c]);
      EXPECT_EQ(bytes, encode_pgm(channel_image(fc.snapshot, c)));
      EXPECT_EQ(encode_pgm(read_pgm(files[c])), bytes);
    }
  }
  EXPECT_EQ(total, 4u + 4u + 8u + 8u);
  std::size_t on_disk = 0;
  for ([[maybe_unused]] auto& e : std::filesystem::directory_iterator(dir / "fm")) ++on_disk;
  EXPECT_EQ(on_disk, total);
}

TEST(Export, HistoryCsvFile) {
  fixtures::TempDir dir;
  train::TrainReport r;
  r.model = "m";
  r.epochs = {{1, 1.0, 0.5, 1.1, 0.4, 3.0}};
  export_history_csv({r}, dir / "h.csv");
  EXPECT_EQ(fixtures::read_file(dir / "h.csv"),
            std::string(train::kHistoryHeader) + "\nm,1,1.000000,0.500000,1.100000,0.400000\n");
}

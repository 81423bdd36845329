#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgmlp/model.hpp"
#include "cgmlp/training.hpp"

namespace cgmlp::viz {

struct FeatureCapture {
  std::string layer;
  Tensor<float> snapshot;  // [C x h x w]
  std::size_t image_index = 0;
  std::string checkpoint_id;
};

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, max value 255
};

// Runs one forward pass on img [1 x 3 x 32 x 32] and returns a copy of each
// requested tap. Throws Error listing the valid names on an unknown layer.
std::vector<FeatureCapture> capture_feature_maps(const Model<float>& model,
                                                 const Tensor<float>& img,
                                                 const std::vector<std::string>& layers,
                                                 std::size_t image_index = 0,
                                                 const std::string& checkpoint_id = "");

// Per-channel min-max scaling to [0, 255]; a constant channel maps to 0.
PgmImage channel_image(const Tensor<float>& snapshot, std::size_t channel);

// Binary P5: "P5\n{w} {h}\n255\n" followed by w*h bytes.
std::string encode_pgm(const PgmImage& img);
PgmImage parse_pgm(const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const PgmImage& img);
PgmImage read_pgm(const std::filesystem::path& path);

// Writes {layer}_{channel:03}.pgm for every channel; returns the paths in
// channel order.
std::vector<std::filesystem::path> export_channel_images(const FeatureCapture& fc,
                                                         const std::filesystem::path& out_dir);

// Same format as train::write_history_csv, written to a file.
void export_history_csv(const std::vector<train::TrainReport>& reports,
                        const std::filesystem::path& path);

}  // namespace cgmlp::viz

#include "cgmlp/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cgmlp::viz {

std::vector<FeatureCapture> capture_feature_maps(const Model<float>& model,
                                                 const Tensor<float>& img,
                                                 const std::vector<std::string>& layers,
                                                 std::size_t image_index,
                                                 const std::string& checkpoint_id) {
  const auto valid = model.tap_names();
  for (const auto& name : layers) {
    if (std::find(valid.begin(), valid.end(), name) == valid.end()) {
      std::string list;
      for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
      throw Error("unknown layer '" + name + "'; valid layers: " +
                  (list.empty() ? std::string("(none: model has no conv stem)") : list));
    }
  }
  if (img.rank() != 4 || img.dim(0) != 1) {
    throw ShapeError("capture_feature_maps: expected a single image [1 x 3 x 32 x 32], got " +
                     to_string(img.shape()));
  }
  nn::FeatureTaps<float> taps;
  model.forward(img, &taps);
  std::vector<FeatureCapture> out;
  for (const auto& name : layers) {
    for (const auto& [tap, t] : taps) {
      if (tap != name) continue;
      Shape s(t.shape().begin() + 1, t.shape().end());
      out.push_back({name, Tensor<float>(s, std::vector<float>(t.data().begin(), t.data().end())),
                     image_index, checkpoint_id});
    }
  }
  return out;
}

PgmImage channel_image(const Tensor<float>& snapshot, std::size_t channel) {
  if (snapshot.rank() != 3 || channel >= snapshot.dim(0)) {
    throw ShapeError("channel_image: channel " + std::to_string(channel) + " out of range for " +
                     to_string(snapshot.shape()));
  }
  PgmImage img;
  img.height = snapshot.dim(1);
  img.width = snapshot.dim(2);
  const std::size_t n = img.width * img.height;
  const float* p = snapshot.raw() + channel * n;
  const auto [lo, hi] = std::minmax_element(p, p + n);
  img.pixels.assign(n, 0);
  if (*hi > *lo) {
    const double scale = 255.0 / (static_cast<double>(*hi) - *lo);
    for (std::size_t i = 0; i < n; ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround((p[i] - *lo) * scale));
    }
  }
  return img;
}

std::string encode_pgm(const PgmImage& img) {
  std::string out =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

PgmImage parse_pgm(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string magic;
  PgmImage img;
  int maxval = 0;
  is >> magic >> img.width >> img.height >> maxval;
  if (!is || magic != "P5" || maxval != 255 || img.width == 0 || img.height == 0) {
    throw Error("not a binary 8-bit PGM (P5) image");
  }
  is.get();  // single whitespace after maxval
  const std::size_t offset = static_cast<std::size_t>(is.tellg());
  if (bytes.size() - offset != img.width * img.height) {
    throw Error("PGM payload has " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                std::to_string(img.width * img.height));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return img;
}

void write_pgm(const std::filesystem::path& path, const PgmImage& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = encode_pgm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_pgm(std::string(std::istreambuf_iterator<char>(in), {}));
}

std::vector<std::filesystem::path> export_channel_images(const FeatureCapture& fc,
                                                         const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> files;
  for (std::size_t c = 0; c < fc.snapshot.dim(0); ++c) {
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "_%03zu.pgm", c);
    const auto path = out_dir / (fc.layer + suffix);
    write_pgm(path, channel_image(fc.snapshot, c));
    files.push_back(path);
  }
  return files;
}

void export_history_csv(const std::vector<train::TrainReport>& reports,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  train::write_history_csv(out, reports);
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace cgmlp::viz

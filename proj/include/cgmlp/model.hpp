#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cgmlp/layers.hpp"
#include "cgmlp/rng.hpp"
#include "cgmlp/tape.hpp"

namespace cgmlp {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class DatasetKind { kCifar10, kCifar100 };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset(const std::string& s);
int num_classes_of(DatasetKind kind);

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 3;

struct ModelConfig {
  std::string name = "custom";
  DatasetKind dataset = DatasetKind::kCifar100;
  int stem_layers = 0;  // 0 = pure gMLP with patch embedding
  std::vector<int> stem_channels;
  int patch_size = 4;  // used only when stem_layers == 0
  int d_model = 256;
  int d_ffn = 512;
  int num_blocks = 4;
  std::vector<nn::Gating> gating;  // one entry per block
  int num_classes = 100;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // (32 / 2^stem_layers)^2 with a stem, (32 / patch_size)^2 without.
  std::size_t tokens() const;

  // Canonical "key=value" lines in a fixed order; from_text accepts the same
  // format (blank lines and '#' comments allowed, unknown keys rejected).
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  // Sets d_model and d_ffn = 2 d_model.
  void set_width(int d);

  // gmlp4: patch 4, all-spatial; cgmlp1: stem [32]; cgmlp2: stem [32, 64].
  static ModelConfig preset(const std::string& name, DatasetKind dataset = DatasetKind::kCifar100);
  static std::vector<std::string> preset_names();

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
class Model {
 public:
  Model() = default;

  static Model build(const ModelConfig& cfg, Rng& rng);
  static Model build(const ModelConfig& cfg) {
    Rng rng(cfg.seed);
    return build(cfg, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  // batch [B x 3 x 32 x 32] -> logits [B x num_classes]. Records on the tape
  // of whichever tensors are bound (see bind()). When `taps` is non-null,
  // conv stem activations are captured as copies.
  Tensor<T> forward(const Tensor<T>& batch, nn::FeatureTaps<T>* taps = nullptr) const;

  // Shallow copy whose parameters are watched on `tape`; ids and storage are
  // shared with this model.
  Model bind(Tape<T>& tape) const;

  // Deep copy with fresh ids.
  Model clone() const;

  template <typename U>
  Model<U> cast() const;

  // Ordered (name, tensor) handles sharing storage with the model.
  std::vector<std::pair<std::string, Tensor<T>>> parameters() const;
  std::size_t param_count() const;

  // Taps produced by forward(): "stem.{i}.act" and "stem.{i}.pool".
  std::vector<std::string> tap_names() const;

  template <typename F>
  void for_each_param(F&& f) {
    for (std::size_t i = 0; i < stem_.size(); ++i) {
      nn::visit_params("stem." + std::to_string(i) + ".conv", stem_[i], f);
    }
    if (patch_) nn::visit_params("embed", patch_->proj, f);
    if (tokenizer_) nn::visit_params("embed", *tokenizer_, f);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      nn::visit_params("blocks." + std::to_string(i), blocks_[i], f);
    }
    nn::visit_params("head", head_, f);
  }

 private:
  template <typename U>
  friend class Model;

  ModelConfig cfg_;
  std::vector<nn::ConvStemBlock<T>> stem_;
  std::optional<nn::PatchEmbed<T>> patch_;
  std::optional<nn::Affine<T>> tokenizer_;
  std::vector<nn::GmlpBlock<T>> blocks_;
  nn::Affine<T> head_;
};

// Convenience wrappers matching the builder vocabulary.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, Rng& rng) {
  return Model<T>::build(cfg, rng);
}

template <typename T>
std::size_t param_count(const Model<T>& m) {
  return m.param_count();
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace cgmlp

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cgmlp/ops.hpp"
#include "cgmlp/rng.hpp"
#include "cgmlp/tensor.hpp"

// Building blocks of the gMLP and convolutional-stem models. Each layer is a
// plain struct of parameter tensors plus a free forward function; parameter
// enumeration goes through visit_params so models can name, bind and
// serialize every tensor uniformly.
namespace cgmlp::nn {

enum class Gating { kSpatial, kChannel };

std::string to_string(Gating g);
Gating parse_gating(const std::string& s);

// Gate projections start near zero with unit bias so every gating unit
// begins as (almost) the identity on its first half. The weight scale is
// divided by sqrt(fan_in) so the pre-bias gate has standard deviation
// kGateInitScale whatever the projected axis length is.
inline constexpr double kGateInitScale = 1e-3;

template <typename T>
struct Affine {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct Norm {
  Tensor<T> gamma;
  Tensor<T> beta;
};

// Projection along the token axis: weight [tokens_out x tokens_in].
template <typename T>
struct TokenAffine {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct PatchEmbed {
  std::size_t patch = 0;
  Affine<T> proj;  // [C p p x d]
};

// Splits on the feature axis; mixes tokens with an [n x n] projection.
template <typename T>
struct SpatialGatingUnit {
  Norm<T> norm;  // over d/2
  Tensor<T> weight;  // [n x n]
  Tensor<T> bias;    // [n]
};

// Splits on the token axis; mixes channels with a [d x d] projection.
template <typename T>
struct ChannelGatingUnit {
  Norm<T> norm;  // over d
  Tensor<T> weight;  // [d x d]
  Tensor<T> bias;    // [d]
};

template <typename T>
struct GmlpBlock {
  Norm<T> norm;
  Affine<T> proj_in;  // d -> d_ffn
  std::variant<SpatialGatingUnit<T>, ChannelGatingUnit<T>> gate;
  Affine<T> proj_out;  // spatial: d_ffn/2 -> d; channel: d_ffn -> d
  std::optional<TokenAffine<T>> token_restore;  // channel gating only: n/2 -> n

  Gating gating() const {
    return std::holds_alternative<SpatialGatingUnit<T>>(gate) ? Gating::kSpatial
                                                              : Gating::kChannel;
  }
};

template <typename T>
struct ConvStemBlock {
  Tensor<T> kernel;  // [Cout x Cin x 3 x 3]
  Tensor<T> bias;    // [Cout]
};

// Named intermediate activations recorded during a forward pass.
template <typename T>
using FeatureTaps = std::vector<std::pair<std::string, Tensor<T>>>;

// --- construction -----------------------------------------------------------
// Weights ~ Normal(0, sqrt(2 / fan_in)), biases 0, norms gamma 1 / beta 0,
// gate weights ~ Normal(0, kGateInitScale / sqrt(fan_in)) with gate bias 1.
// Draws happen in declaration order: weight first, then bias.

template <typename T>
Affine<T> make_affine(std::size_t in, std::size_t out, Rng& rng);
template <typename T>
Norm<T> make_norm(std::size_t d);
template <typename T>
PatchEmbed<T> make_patch_embed(std::size_t channels, std::size_t patch, std::size_t d, Rng& rng);
template <typename T>
SpatialGatingUnit<T> make_spatial_gating(std::size_t tokens, std::size_t d, Rng& rng);
template <typename T>
ChannelGatingUnit<T> make_channel_gating(std::size_t d, Rng& rng);
template <typename T>
GmlpBlock<T> make_gmlp_block(std::size_t tokens, std::size_t d, std::size_t d_ffn, Gating gating,
                             Rng& rng);
template <typename T>
ConvStemBlock<T> make_conv_stem_block(std::size_t cin, std::size_t cout, Rng& rng);

// --- forward ----------------------------------------------------------------

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, const PatchEmbed<T>& pe);

// x [B x n x d] -> [B x n x d/2]
template <typename T>
Tensor<T> spatial_gating(const Tensor<T>& x, const SpatialGatingUnit<T>& sgu);

// x [B x n x d] -> [B x n/2 x d]
template <typename T>
Tensor<T> channel_gating(const Tensor<T>& x, const ChannelGatingUnit<T>& cgu);

// x + proj_out(gate(gelu(proj_in(norm(x))))), shape preserving.
template <typename T>
Tensor<T> gmlp_block(const Tensor<T>& x, const GmlpBlock<T>& blk);

// conv 3x3 same -> gelu -> maxpool 2x2 for every block. When `taps` is
// non-null, records "stem.{i}.act" and "stem.{i}.pool" snapshots.
template <typename T>
Tensor<T> conv_stem(const Tensor<T>& img, const std::vector<ConvStemBlock<T>>& blocks,
                    FeatureTaps<T>* taps = nullptr);

// [B x C x h x w] -> [B x hw x d]
template <typename T>
Tensor<T> tokenize_featuremap(const Tensor<T>& fm, const Affine<T>& proj);

// Mean over tokens, then affine: [B x n x d] -> [B x classes]
template <typename T>
Tensor<T> classify_head(const Tensor<T>& x, const Affine<T>& head);

// --- parameter enumeration --------------------------------------------------

template <typename T, typename F>
void visit_params(const std::string& prefix, Affine<T>& a, F&& f) {
  f(prefix + ".weight", a.weight);
  f(prefix + ".bias", a.bias);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, Norm<T>& n, F&& f) {
  f(prefix + ".gamma", n.gamma);
  f(prefix + ".beta", n.beta);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, TokenAffine<T>& a, F&& f) {
  f(prefix + ".weight", a.weight);
  f(prefix + ".bias", a.bias);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, SpatialGatingUnit<T>& u, F&& f) {
  visit_params(prefix + ".norm", u.norm, f);
  f(prefix + ".weight", u.weight);
  f(prefix + ".bias", u.bias);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, ChannelGatingUnit<T>& u, F&& f) {
  visit_params(prefix + ".norm", u.norm, f);
  f(prefix + ".weight", u.weight);
  f(prefix + ".bias", u.bias);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, GmlpBlock<T>& b, F&& f) {
  visit_params(prefix + ".norm", b.norm, f);
  visit_params(prefix + ".proj_in", b.proj_in, f);
  std::visit([&](auto& g) { visit_params(prefix + ".gate", g, f); }, b.gate);
  visit_params(prefix + ".proj_out", b.proj_out, f);
  if (b.token_restore) visit_params(prefix + ".token_restore", *b.token_restore, f);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, ConvStemBlock<T>& c, F&& f) {
  f(prefix + ".weight", c.kernel);
  f(prefix + ".bias", c.bias);
}

}  // namespace cgmlp::nn

#include "cgmlp/layers.hpp"

#include <cmath>

namespace cgmlp::nn {

using cgmlp::to_string;

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> values(cgmlp::numel(shape));
  for (T& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(std::move(shape), std::move(values));
}

double he_std(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

double gate_std(std::size_t fan_in) {
  return kGateInitScale / std::sqrt(static_cast<double>(fan_in));
}

}  // namespace

std::string to_string(Gating g) { return g == Gating::kSpatial ? "spatial" : "channel"; }

Gating parse_gating(const std::string& s) {
  if (s == "spatial") return Gating::kSpatial;
  if (s == "channel") return Gating::kChannel;
  throw Error("unknown gating '" + s + "' (expected spatial or channel)");
}

template <typename T>
Affine<T> make_affine(std::size_t in, std::size_t out, Rng& rng) {
  Affine<T> a;
  a.weight = normal_tensor<T>({in, out}, he_std(in), rng);
  a.bias = Tensor<T>::zeros({out});
  return a;
}

template <typename T>
Norm<T> make_norm(std::size_t d) {
  return {Tensor<T>::ones({d}), Tensor<T>::zeros({d})};
}

template <typename T>
PatchEmbed<T> make_patch_embed(std::size_t channels, std::size_t patch, std::size_t d, Rng& rng) {
  return {patch, make_affine<T>(channels * patch * patch, d, rng)};
}

template <typename T>
SpatialGatingUnit<T> make_spatial_gating(std::size_t tokens, std::size_t d, Rng& rng) {
  if (d % 2 != 0) throw ShapeError("spatial gating: feature dim " + std::to_string(d) + " is odd");
  SpatialGatingUnit<T> u;
  u.norm = make_norm<T>(d / 2);
  u.weight = normal_tensor<T>({tokens, tokens}, gate_std(tokens), rng);
  u.bias = Tensor<T>::ones({tokens});
  return u;
}

template <typename T>
ChannelGatingUnit<T> make_channel_gating(std::size_t d, Rng& rng) {
  ChannelGatingUnit<T> u;
  u.norm = make_norm<T>(d);
  u.weight = normal_tensor<T>({d, d}, gate_std(d), rng);
  u.bias = Tensor<T>::ones({d});
  return u;
}

template <typename T>
GmlpBlock<T> make_gmlp_block(std::size_t tokens, std::size_t d, std::size_t d_ffn, Gating gating,
                             Rng& rng) {
  if (d_ffn % 2 != 0) throw ShapeError("gmlp block: d_ffn " + std::to_string(d_ffn) + " is odd");
  GmlpBlock<T> b;
  b.norm = make_norm<T>(d);
  b.proj_in = make_affine<T>(d, d_ffn, rng);
  if (gating == Gating::kSpatial) {
    b.gate = make_spatial_gating<T>(tokens, d_ffn, rng);
    b.proj_out = make_affine<T>(d_ffn / 2, d, rng);
  } else {
    if (tokens % 2 != 0) {
      throw ShapeError("gmlp block: channel gating needs an even token count, got " +
                       std::to_string(tokens));
    }
    b.gate = make_channel_gating<T>(d_ffn, rng);
    b.proj_out = make_affine<T>(d_ffn, d, rng);
    TokenAffine<T> restore;
    restore.weight = normal_tensor<T>({tokens, tokens / 2}, he_std(tokens / 2), rng);
    restore.bias = Tensor<T>::zeros({tokens});
    b.token_restore = std::move(restore);
  }
  return b;
}

template <typename T>
ConvStemBlock<T> make_conv_stem_block(std::size_t cin, std::size_t cout, Rng& rng) {
  ConvStemBlock<T> c;
  c.kernel = normal_tensor<T>({cout, cin, 3, 3}, he_std(cin * 9), rng);
  c.bias = Tensor<T>::zeros({cout});
  return c;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, const PatchEmbed<T>& pe) {
  return ops::linear(ops::patchify(img, pe.patch), pe.proj.weight, pe.proj.bias);
}

template <typename T>
Tensor<T> spatial_gating(const Tensor<T>& x, const SpatialGatingUnit<T>& sgu) {
  if (x.rank() != 3) throw ShapeError("spatial_gating: expected [B x n x d], got " + to_string(x.shape()));
  if (x.dim(2) % 2 != 0) {
    throw ShapeError("spatial_gating: feature dim " + std::to_string(x.dim(2)) + " is odd");
  }
  if (x.dim(1) != sgu.weight.dim(1)) {
    throw ShapeError("spatial_gating: token count " + std::to_string(x.dim(1)) +
                     " does not match projection " + to_string(sgu.weight.shape()));
  }
  auto [x1, x2] = ops::split_axis(x, 2);
  Tensor<T> z = ops::layer_norm(x2, sgu.norm.gamma, sgu.norm.beta);
  return ops::mul(x1, ops::token_affine(z, sgu.weight, sgu.bias));
}

template <typename T>
Tensor<T> channel_gating(const Tensor<T>& x, const ChannelGatingUnit<T>& cgu) {
  if (x.rank() != 3) throw ShapeError("channel_gating: expected [B x n x d], got " + to_string(x.shape()));
  if (x.dim(1) % 2 != 0) {
    throw ShapeError("channel_gating: token count " + std::to_string(x.dim(1)) + " is odd");
  }
  auto [x1, x2] = ops::split_axis(x, 1);
  Tensor<T> z = ops::layer_norm(x2, cgu.norm.gamma, cgu.norm.beta);
  return ops::mul(x1, ops::linear(z, cgu.weight, cgu.bias));
}

template <typename T>
Tensor<T> gmlp_block(const Tensor<T>& x, const GmlpBlock<T>& blk) {
  if (x.rank() != 3 || x.dim(2) != blk.norm.gamma.dim(0)) {
    throw ShapeError("gmlp_block: input " + to_string(x.shape()) + " does not match block width " +
                     std::to_string(blk.norm.gamma.dim(0)));
  }
  Tensor<T> h = ops::layer_norm(x, blk.norm.gamma, blk.norm.beta);
  h = ops::gelu(ops::linear(h, blk.proj_in.weight, blk.proj_in.bias));
  if (const auto* sgu = std::get_if<SpatialGatingUnit<T>>(&blk.gate)) {
    h = spatial_gating(h, *sgu);
    h = ops::linear(h, blk.proj_out.weight, blk.proj_out.bias);
  } else {
    h = channel_gating(h, std::get<ChannelGatingUnit<T>>(blk.gate));
    h = ops::linear(h, blk.proj_out.weight, blk.proj_out.bias);
    h = ops::token_affine(h, blk.token_restore->weight, blk.token_restore->bias);
  }
  return ops::add(x, h);
}

template <typename T>
Tensor<T> conv_stem(const Tensor<T>& img, const std::vector<ConvStemBlock<T>>& blocks,
                    FeatureTaps<T>* taps) {
  Tensor<T> h = img;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (h.rank() != 4 || h.dim(2) % 2 != 0 || h.dim(3) % 2 != 0) {
      throw ShapeError("conv_stem: block " + std::to_string(i) + " input " + to_string(h.shape()) +
                       " has odd spatial extent");
    }
    h = ops::gelu(ops::conv2d(h, blocks[i].kernel, blocks[i].bias, 1, ops::Padding::kSame));
    if (taps) taps->emplace_back("stem." + std::to_string(i) + ".act", h.clone());
    h = ops::maxpool2d(h);
    if (taps) taps->emplace_back("stem." + std::to_string(i) + ".pool", h.clone());
  }
  return h;
}

template <typename T>
Tensor<T> tokenize_featuremap(const Tensor<T>& fm, const Affine<T>& proj) {
  return ops::linear(ops::to_tokens(fm), proj.weight, proj.bias);
}

template <typename T>
Tensor<T> classify_head(const Tensor<T>& x, const Affine<T>& head) {
  return ops::linear(ops::mean_tokens(x), head.weight, head.bias);
}

#define CGMLP_INSTANTIATE_LAYERS(T)                                                            \
  template Affine<T> make_affine<T>(std::size_t, std::size_t, Rng&);                           \
  template Norm<T> make_norm<T>(std::size_t);                                                  \
  template PatchEmbed<T> make_patch_embed<T>(std::size_t, std::size_t, std::size_t, Rng&);     \
  template SpatialGatingUnit<T> make_spatial_gating<T>(std::size_t, std::size_t, Rng&);        \
  template ChannelGatingUnit<T> make_channel_gating<T>(std::size_t, Rng&);                     \
  template GmlpBlock<T> make_gmlp_block<T>(std::size_t, std::size_t, std::size_t, Gating,      \
                                           Rng&);                                              \
  template ConvStemBlock<T> make_conv_stem_block<T>(std::size_t, std::size_t, Rng&);           \
  template Tensor<T> patch_embed(const Tensor<T>&, const PatchEmbed<T>&);                      \
  template Tensor<T> spatial_gating(const Tensor<T>&, const SpatialGatingUnit<T>&);            \
  template Tensor<T> channel_gating(const Tensor<T>&, const ChannelGatingUnit<T>&);            \
  template Tensor<T> gmlp_block(const Tensor<T>&, const GmlpBlock<T>&);                        \
  template Tensor<T> conv_stem(const Tensor<T>&, const std::vector<ConvStemBlock<T>>&,         \
                               FeatureTaps<T>*);                                               \
  template Tensor<T> tokenize_featuremap(const Tensor<T>&, const Affine<T>&);                  \
  template Tensor<T> classify_head(const Tensor<T>&, const Affine<T>&);

CGMLP_INSTANTIATE_LAYERS(float)
CGMLP_INSTANTIATE_LAYERS(double)

#undef CGMLP_INSTANTIATE_LAYERS

}  // namespace cgmlp::nn

#include "cgmlp/model_gradcheck.hpp"

#include <span>
#include <vector>

#include "cgmlp/ops.hpp"

namespace cgmlp {

GradCheckReport check_model_gradients(const ModelConfig& cfg, std::size_t batch, double h,
                                      double tol) {
  cfg.validate();
  Model<double> model = Model<double>::build(cfg);
  Rng rng(mix_seed(cfg.seed, 0x6772616463686bULL));
  std::vector<double> pixels(batch * kImageChannels * kImageSize * kImageSize);
  for (double& p : pixels) p = rng.normal();
  const Tensor<double> images({batch, kImageChannels, kImageSize, kImageSize}, std::move(pixels));
  std::vector<int> labels(batch);
  for (int& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));

  const LossFn loss = [&](Tape<double>* tape) {
    const Model<double> m = tape ? model.bind(*tape) : model;
    return ops::cross_entropy(m.forward(images), std::span<const int>(labels));
  };
  std::vector<NamedTensor> params;
  for (auto& [name, t] : model.parameters()) params.push_back({name, t});
  return grad_check(loss, params, h, tol);
}

}  // namespace cgmlp

#pragma once

#include <cstddef>
#include <cstdint>

#include "cgmlp/grad_check.hpp"
#include "cgmlp/model.hpp"

namespace cgmlp {

// Gradient check of a whole model in f64: cross-entropy on `batch` standard
// normal images with uniform random labels, every parameter coordinate
// perturbed in turn. Input and labels are drawn from mix_seed(cfg.seed, ...).
GradCheckReport check_model_gradients(const ModelConfig& cfg, std::size_t batch = 2,
                                      double h = 1e-4, double tol = 1e-3);

}  // namespace cgmlp

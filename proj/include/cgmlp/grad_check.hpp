#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cgmlp/tape.hpp"
#include "cgmlp/tensor.hpp"

namespace cgmlp {

struct NamedTensor {
  std::string name;
  Tensor<double> tensor;
};

// A coordinate whose central difference disagrees with the tape gradient
// while one of the one-sided differences agrees: the loss has a kink there
// (e.g. a maxpool tie) and the tape returned one of its subgradients.
struct FlaggedCoordinate {
  std::string param;
  std::size_t index;
  double analytic;
  double central;
  double forward;
  double backward;
};

struct GradCheckReport {
  double max_rel_err = 0.0;  // over unflagged coordinates
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  std::vector<FlaggedCoordinate> flagged;
  bool pass = false;
};

class NonDeterministicError : public Error {
 public:
  using Error::Error;
};

// Builds a scalar loss from the parameters. When `tape` is non-null the
// function must route every parameter through tape->watch() (directly or via
// a model bound to the tape); with a null tape it runs a plain forward.
using LossFn = std::function<Tensor<double>(Tape<double>* tape)>;

// Compares tape gradients with central differences (f(θ+h) − f(θ−h)) / 2h,
// coordinate by coordinate. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). `params` must alias the storage the loss
// function reads, since coordinates are perturbed in place and restored.
GradCheckReport grad_check(const LossFn& loss, const std::vector<NamedTensor>& params, double h,
                           double tol);

double relative_error(double a, double b);

}  // namespace cgmlp

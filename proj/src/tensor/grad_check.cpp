#include "cgmlp/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cgmlp {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const LossFn& loss, const std::vector<NamedTensor>& params, double h,
                           double tol) {
  const double base = loss(nullptr).item();
  const double again = loss(nullptr).item();
  if (base != again) {
    throw NonDeterministicError("grad_check: two baseline evaluations differ (" +
                                std::to_string(base) + " vs " + std::to_string(again) + ")");
  }

  Gradients<double> grads;
  {
    Tape<double> tape;
    Tensor<double> value = loss(&tape);
    grads = tape.backward(value);
  }

  GradCheckReport report;
  for (const NamedTensor& p : params) {
    if (!grads.contains(p.tensor)) {
      throw TapeError("grad_check: parameter " + p.name + " was not watched by the loss function");
    }
    const Tensor<double>& g = grads.of(p.tensor);
    Tensor<double> param = p.tensor;
    auto values = param.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss(nullptr).item();
      values[i] = saved - h;
      const double down = loss(nullptr).item();
      values[i] = saved;

      const double analytic = g.data()[i];
      const double central = (up - down) / (2.0 * h);
      const double err = relative_error(analytic, central);
      ++report.coordinates;
      if (err > tol) {
        const double fwd = (up - base) / h;
        const double bwd = (base - down) / h;
        if (relative_error(analytic, fwd) <= tol || relative_error(analytic, bwd) <= tol) {
          report.flagged.push_back({p.name, i, analytic, central, fwd, bwd});
          continue;
        }
      }
      if (report.worst_param.empty() || err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = central;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace cgmlp

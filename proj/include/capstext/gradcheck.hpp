#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "capstext/tape.hpp"

namespace capstext {

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds a scalar loss on the given tape from parameter handles (same order
/// as the NamedTensor list).
using LossBuilder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients against central differences, coordinate by
/// coordinate, and returns the worst |a - n| / (|a| + |n| + 1e-12).
inline GradCheckResult grad_check(const LossBuilder& loss_fn, std::vector<NamedTensor> params,
                                  double eps = 1e-5) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw ContractError("grad_check: eps must lie in [1e-6, 1e-3]");
  }
  auto evaluate = [&](bool want_grad, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p.name, p.value));
    Var<double> loss = loss_fn(tape, vars);
    const double v = loss.value()[0];
    if (want_grad) *grads = tape.backward(loss);
    return v;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<double>& value = params[p].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = evaluate(false, nullptr);
      value[i] = saved - eps;
      const double down = evaluate(false, nullptr);
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      if (std::isnan(a) || std::isnan(numeric)) {
        throw NumericalError("grad_check: NaN gradient for " + params[p].name + "[" +
                             std::to_string(i) + "]");
      }
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      if (result.worst_param.empty() || rel > result.max_rel_error) {
        result = {rel, params[p].name, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace capstext

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "capstext/parameter.hpp"
#include "capstext/tape.hpp"

namespace capstext {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;  // first moments
  std::vector<Tensor<T>> u;  // second moments
};

/// One bias-corrected Adam update. Gradients are checked for NaN/Inf before
/// anything is modified; a bad gradient throws NumericalError naming the
/// parameter and leaves parameters and state untouched.
template <typename T>
void adam_step(ParameterList<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr);

/// lr0 * decay^epoch.
double lr_schedule(double lr0, std::size_t epoch, double decay = 0.99);

using GroupLambdas = std::map<std::string, double>;

/// sum over groups of lambda_g * sum ||W||^2, biases excluded. A parameter
/// whose group has no constant is a ConfigError.
template <typename T>
double l2_penalty(const ParameterList<T>& params, const GroupLambdas& lambdas);

/// Same penalty recorded on a tape. `vars[i]` is the tape handle of params[i].
template <typename T>
Var<T> l2_penalty(Tape<T>& tape, std::span<const Var<T>> vars, const ParameterList<T>& params,
                  const GroupLambdas& lambdas);

/// Inverted dropout mask: 0 with probability p, else 1/(1-p). With
/// training=false the mask is all ones. p outside [0, 1) is a ConfigError.
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng, bool training = true);

}  // namespace capstext

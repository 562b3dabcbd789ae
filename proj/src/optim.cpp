#include "capstext/optim.hpp"

#include <cmath>

#include "capstext/errors.hpp"

namespace capstext {

template <typename T>
void adam_step(ParameterList<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape() != params[p].value.shape()) {
      throw ShapeError("adam_step: gradient shape " + shape_str(grads[p].shape()) +
                       " for parameter " + params[p].name + " " +
                       shape_str(params[p].value.shape()));
    }
    if (!grads[p].all_finite()) {
      throw NumericalError("adam_step: non-finite gradient for parameter '" + params[p].name +
                           "' at step " + std::to_string(state.step + 1));
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.u.emplace_back(p.value.shape());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& w = params[p].value;
    Tensor<T>& m = state.m[p];
    Tensor<T>& u = state.u[p];
    const Tensor<T>& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      u[i] = b2 * u[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / c1;
      const double uhat = static_cast<double>(u[i]) / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(uhat) + state.eps));
    }
  }
}

double lr_schedule(double lr0, std::size_t epoch, double decay) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

namespace {
double lambda_for(const GroupLambdas& lambdas, const std::string& group, const std::string& name) {
  auto it = lambdas.find(group);
  if (it == lambdas.end()) {
    throw ConfigError("parameter '" + name + "' belongs to group '" + group +
                      "' which has no regularization constant");
  }
  return it->second;
}
}  // namespace

template <typename T>
double l2_penalty(const ParameterList<T>& params, const GroupLambdas& lambdas) {
  double total = 0;
  for (const auto& p : params) {
    const double lambda = lambda_for(lambdas, p.group, p.name);
    if (p.is_bias || lambda == 0.0) continue;
    double sq = 0;
    for (T v : p.value.data()) sq += static_cast<double>(v) * static_cast<double>(v);
    total += lambda * sq;
  }
  return total;
}

template <typename T>
Var<T> l2_penalty(Tape<T>& tape, std::span<const Var<T>> vars, const ParameterList<T>& params,
                  const GroupLambdas& lambdas) {
  if (vars.size() != params.size()) throw ContractError("l2_penalty: handle count mismatch");
  Var<T> total = tape.constant(Tensor<T>::scalar(T(0)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lambda = lambda_for(lambdas, params[i].group, params[i].name);
    if (params[i].is_bias || lambda == 0.0) continue;
    total = ad::add(total, ad::scale(ad::sum_squares(vars[i]), static_cast<T>(lambda)));
  }
  return total;
}

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::mt19937_64& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  }
  Tensor<T> mask(shape, T(1));
  if (!training || p == 0.0) return mask;
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (auto& v : mask.data()) v = unif(rng) < p ? T(0) : keep;
  return mask;
}

#define CAPSTEXT_INSTANTIATE(T)                                                            \
  template void adam_step(ParameterList<T>&, std::span<const Tensor<T>>, AdamState<T>&, double); \
  template double l2_penalty(const ParameterList<T>&, const GroupLambdas&);                \
  template Var<T> l2_penalty(Tape<T>&, std::span<const Var<T>>, const ParameterList<T>&,   \
                             const GroupLambdas&);                                         \
  template Tensor<T> dropout_mask(const Shape&, double, std::mt19937_64&, bool);

CAPSTEXT_INSTANTIATE(float)
CAPSTEXT_INSTANTIATE(double)

#undef CAPSTEXT_INSTANTIATE

}  // namespace capstext

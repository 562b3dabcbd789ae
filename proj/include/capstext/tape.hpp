#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "capstext/tensor.hpp"

namespace capstext {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

/// Records primitive operations for reverse-mode differentiation.
///
/// Parameters are registered by name and referenced, not copied: the tensors
/// must outlive the tape. A tape is single-use and single-owner; build a new
/// one per forward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var<T> constant(Tensor<T> value);
  Var<T> parameter(std::string name, const Tensor<T>& value);

  /// Appends an operation. `backward` runs only if some input requires a
  /// gradient; it reads grad(self) and accumulates into the inputs' grads.
  Var<T> record(Tensor<T> value, std::span<const std::size_t> inputs, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient slot for a node, zero-initialised on first access.
  Tensor<T>& grad(std::size_t id);

  /// Runs the recorded operations in reverse from a scalar loss and returns
  /// one gradient per registered parameter, in registration order. Unused
  /// parameters get zeros.
  std::vector<Tensor<T>> backward(Var<T> loss);

  const std::vector<std::string>& parameter_names() const { return param_names_; }
  std::size_t size() const { return nodes_.size(); }
  /// Node ids whose backward ran during the last backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return visited_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::string> param_names_;
  std::vector<std::size_t> param_nodes_;
  std::vector<std::size_t> visited_;
};

/// Differentiable operations. Shapes follow the matching kernels.
namespace ad {

template <typename T> Var<T> conv1d(Var<T> x, Var<T> kernel, Var<T> bias);
template <typename T> Var<T> elu(Var<T> x);
template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> squash(Var<T> s);
template <typename T> Var<T> norm_last(Var<T> x);
template <typename T> Var<T> maxpool_rows(Var<T> x, std::size_t pool);
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);
template <typename T> Var<T> predict_upper(Var<T> h, Var<T> weights);
template <typename T> Var<T> route_sum(Var<T> u);
template <typename T> Var<T> weighted_route_sum(Var<T> c, Var<T> u);
template <typename T> Var<T> agreement(Var<T> v, Var<T> u);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

/// Rows of a [V x e] table selected by ids -> [ids.size()/l x l x e] when
/// `seq_len` = l. Row `skip_grad_id` (the pad row) receives no gradient.
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> ids, std::size_t seq_len,
                   std::int32_t skip_grad_id);

/// Concatenates [B x L_i x C_i] maps along channels, keeping the first
/// min(L_i) rows of each.
template <typename T> Var<T> concat_channels(std::span<const Var<T>> maps);

/// [B x k x N] -> [B x (k*N)] with every row zeroed except row labels[b].
template <typename T> Var<T> mask_capsules(Var<T> v, std::span<const int> labels);

/// Mean over the batch of the capsule margin loss on norms [B x k].
template <typename T>
Var<T> margin_loss(Var<T> norms, std::span<const int> labels, T m_plus = T(0.9),
                   T m_minus = T(0.1), T lambda = T(0.5));

/// Mean squared error against a constant target of the same size.
template <typename T> Var<T> mse(Var<T> x, const Tensor<T>& target);
template <typename T> Var<T> sum_squares(Var<T> x);
template <typename T> Var<T> sum(Var<T> x);
/// sum(x * weights) with constant weights.
template <typename T> Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights);

}  // namespace ad
}  // namespace capstext

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "capstext/config.hpp"
#include "capstext/parameter.hpp"
#include "capstext/tape.hpp"

namespace capstext {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;

// ---------------------------------------------------------------------------
// Layer parameters for single-document evaluation.

template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // [f x e x n]
  Tensor<T> bias;    // [n]
};

/// ELU-gate: (D*W + b) (x) elu(D*V + c).
template <typename T>
struct GateConvParams {
  Tensor<T> w, v;  // [f x e x n]
  Tensor<T> b, c;  // [n]
};

template <typename T>
struct FrontendParams {
  Frontend variant = Frontend::kEluGate;
  GateConvParams<T> gate;            // elu_gate
  ConvParams<T> plain;               // conv_plain
  std::vector<ConvParams<T>> multi;  // multi_filter(_maxpool), one per filter size
  std::size_t pool = 2;
};

template <typename T>
struct PrimaryCapsuleParams {
  Tensor<T> kernel;  // [(l-f+1) x 1 x n x (a*M)]
  Tensor<T> bias;    // [a*M]
  std::size_t capsules = 0;
  std::size_t dim = 0;
};

template <typename T>
struct DecoderParams {
  Tensor<T> w1, b1, w2, b2, w3, b3;
};

template <typename T>
struct RoutingState {
  Tensor<T> b_logits;  // [a x k]
  Tensor<T> c_coef;    // [a x k]
  std::size_t iteration = 0;
};

template <typename T>
struct ClassCapsules {
  Tensor<T> v;  // [k x N]
};

// ---------------------------------------------------------------------------
// Single-document operations.

/// Rows of the embedding table for each id -> [l x e]. Ids outside the
/// table throw LookupError.
template <typename T>
Tensor<T> embed_lookup(std::span<const std::int32_t> ids, const Tensor<T>& embeddings);

template <typename T>
Tensor<T> elu_gate_forward(const Tensor<T>& doc, const GateConvParams<T>& p);

template <typename T>
Tensor<T> frontend_forward(const Tensor<T>& doc, const FrontendParams<T>& p);

/// Full-height convolution to a*M channels, reshaped to [a x M] and squashed.
template <typename T>
Tensor<T> primary_capsules_forward(const Tensor<T>& features, const PrimaryCapsuleParams<T>& p);

/// [a x M] with [a x k x M x N] -> [a x k x N].
template <typename T>
Tensor<T> predict_upper(const Tensor<T>& h, const Tensor<T>& w_route);

/// Routing by agreement over predictions [a x k x N] for `iterations` rounds,
/// logits starting at zero. `observer` sees the state after each round.
template <typename T>
std::pair<ClassCapsules<T>, RoutingState<T>> dynamic_route(
    const Tensor<T>& h_hat, std::size_t iterations,
    const std::function<void(const RoutingState<T>&)>& observer = {});

/// s_j = sum_i W_ij h_i, v_j = squash(s_j).
template <typename T>
ClassCapsules<T> static_route(const Tensor<T>& h, const Tensor<T>& w_route);

/// Index of the longest class capsule, lowest index on ties.
template <typename T>
std::size_t classify(const ClassCapsules<T>& v);

template <typename T>
double margin_loss(const ClassCapsules<T>& v, std::size_t label, double m_plus = 0.9,
                   double m_minus = 0.1, double lambda = 0.5);

/// Masks all class capsules but `cls`, then three affine layers (elu after the
/// first two) -> [l x e].
template <typename T>
Tensor<T> reconstruct_forward(const ClassCapsules<T>& v, std::size_t cls,
                              const DecoderParams<T>& d, std::size_t seq_len,
                              std::size_t embed_dim);

/// Copy of v with v[cls][dim] += noise.
template <typename T>
ClassCapsules<T> capsule_dim_perturb(const ClassCapsules<T>& v, std::size_t cls, std::size_t dim,
                                     double noise, double noise_limit = 0.3);

// ---------------------------------------------------------------------------
// Model.

/// Parameter layout for a configuration. Requires vocab_size and max_len.
/// Routing mode does not change the layout: coupling coefficients are not
/// trainable.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);
std::size_t trainable_parameter_count(const ModelConfig& cfg);

template <typename T>
struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout source; required when training
  bool compute_loss = true;        // needs labels
  /// Handles already registered on the tape, parallel to parameters(). When
  /// empty the model registers its own tensors.
  std::vector<Var<T>> bound_params;
};

template <typename T>
struct ForwardResult {
  Var<T> embedded;       // [B x l x e]
  Var<T> primary;        // [B x a x M]
  Var<T> class_caps;     // [B x k x N]
  Var<T> norms;          // [B x k]
  std::optional<Var<T>> margin;
  std::optional<Var<T>> recon_mse;
  std::optional<Var<T>> l2;
  std::optional<Var<T>> loss;
  std::vector<Var<T>> param_vars;  // parallel to parameters()
};

/// Capsule network for text: embedding, front-end, convolutional capsule
/// layer, static or dynamic routing to class capsules, optional decoder.
template <typename T>
class CapsNet {
 public:
  /// Random initialisation: weights N(0, init_std), biases 0, embedding rows
  /// U(-0.25, 0.25) with a zero pad row.
  CapsNet(ModelConfig cfg, std::uint64_t init_seed);
  /// Wraps existing tensors (checkpoint load). Names and shapes must match
  /// parameter_specs(cfg).
  CapsNet(ModelConfig cfg, ParameterList<T> params);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  ParameterList<T>& parameters() { return params_; }
  const ParameterList<T>& parameters() const { return params_; }
  const Tensor<T>& parameter(const std::string& name) const;
  Tensor<T>& parameter(const std::string& name);

  void set_embeddings(const Tensor<T>& table);

  /// Records a batch forward pass. `ids` holds B*l token ids (already padded),
  /// `labels` B classes (needed when compute_loss is set).
  ForwardResult<T> forward(Tape<T>& tape, std::span<const std::int32_t> ids,
                           std::span<const int> labels, const ForwardOptions<T>& opts) const;

  /// Inference-mode class capsules for a padded batch -> [B x k x N].
  Tensor<T> class_capsules(std::span<const std::int32_t> ids) const;
  std::vector<int> predict(std::span<const std::int32_t> ids) const;

  FrontendParams<T> frontend_params() const;
  PrimaryCapsuleParams<T> primary_params() const;
  DecoderParams<T> decoder_params() const;
  /// L2 constants per parameter group; embeddings are not regularized.
  std::map<std::string, double> group_lambdas() const;

 private:
  ModelConfig cfg_;
  ParameterList<T> params_;
};

}  // namespace capstext

#pragma once

// Pure tensor kernels. Every forward kernel treats all leading dimensions
// beyond the ones it names as a flat batch, so a single document [l x e] and
// a batch [B x l x e] go through the same code. Backward kernels accumulate
// (+=) into the gradient tensors they are given; a null pointer skips that
// gradient.

#include <cstddef>
#include <vector>

#include "capstext/tensor.hpp"

namespace capstext::kernels {

inline constexpr double kSquashEps = 1e-8;

/// Valid 1-D convolution along the sequence axis with stride 1.
/// x: [..., l, e], kernel: [f, e, n], bias: [n] -> [..., l-f+1, n].
template <typename T>
Tensor<T> conv1d_valid(const Tensor<T>& x, const Tensor<T>& kernel,
                       const Tensor<T>& bias);
template <typename T>
void conv1d_valid_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>& grad_out, Tensor<T>* grad_x,
                           Tensor<T>* grad_kernel, Tensor<T>* grad_bias);

/// ELU with alpha = 1; derivative at 0 taken as 1.
template <typename T>
Tensor<T> elu(const Tensor<T>& x);
template <typename T>
void elu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Tensor<T>& grad_x);

/// Softmax over the last axis, max-shifted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);
template <typename T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& grad_out,
                           Tensor<T>& grad_x);

/// Capsule squashing over the last axis: (|s|^2 / (1 + |s|^2)) s / (|s| + eps).
template <typename T>
Tensor<T> squash(const Tensor<T>& s);
template <typename T>
void squash_backward(const Tensor<T>& s, const Tensor<T>& grad_out, Tensor<T>& grad_s);

/// Euclidean norm over the last axis: [..., d] -> [...].
template <typename T>
Tensor<T> norm_last(const Tensor<T>& x);
template <typename T>
void norm_last_backward(const Tensor<T>& x, const Tensor<T>& norms,
                        const Tensor<T>& grad_out, Tensor<T>& grad_x);

/// Non-overlapping max pooling over rows: [..., L, C] -> [..., L/p, C].
/// Ties resolve to the first row of the window.
template <typename T>
Tensor<T> maxpool_rows(const Tensor<T>& x, std::size_t pool);
template <typename T>
void maxpool_rows_backward(const Tensor<T>& x, std::size_t pool,
                           const Tensor<T>& grad_out, Tensor<T>& grad_x);

/// Affine map. x: [B, in]; weight holds in*out entries with last dim out.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x,
                     Tensor<T>* grad_weight, Tensor<T>* grad_bias);

/// Prediction vectors u[i][j] = W[i][j]^T h[i].
/// h: [..., a, M], W: [a, k, M, N] -> [..., a, k, N].
template <typename T>
Tensor<T> predict_upper(const Tensor<T>& h, const Tensor<T>& weights);
template <typename T>
void predict_upper_backward(const Tensor<T>& h, const Tensor<T>& weights,
                            const Tensor<T>& grad_out, Tensor<T>* grad_h,
                            Tensor<T>* grad_weights);

/// s[j] = sum_i u[i][j]. u: [..., a, k, N] -> [..., k, N].
template <typename T>
Tensor<T> route_sum(const Tensor<T>& u);
template <typename T>
void route_sum_backward(const Tensor<T>& grad_out, Tensor<T>& grad_u);

/// s[j] = sum_i c[i][j] u[i][j]. c: [..., a, k], u: [..., a, k, N].
template <typename T>
Tensor<T> weighted_route_sum(const Tensor<T>& c, const Tensor<T>& u);
template <typename T>
void weighted_route_sum_backward(const Tensor<T>& c, const Tensor<T>& u,
                                 const Tensor<T>& grad_out, Tensor<T>* grad_c,
                                 Tensor<T>* grad_u);

/// Agreement a[i][j] = v[j] . u[i][j]. v: [..., k, N], u: [..., a, k, N].
template <typename T>
Tensor<T> agreement(const Tensor<T>& v, const Tensor<T>& u);
template <typename T>
void agreement_backward(const Tensor<T>& v, const Tensor<T>& u,
                        const Tensor<T>& grad_out, Tensor<T>* grad_v,
                        Tensor<T>* grad_u);

/// Elementwise helpers. Shapes must match exactly.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y);

void require_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace capstext::kernels

#include "capstext/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "capstext/parallel.hpp"

namespace capstext::kernels {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

namespace {

constexpr std::size_t kRowBlock = 32;

void require_rank_at_least(const Shape& s, std::size_t r, const char* op) {
  if (s.size() < r) {
    throw ShapeError(std::string(op) + ": expected rank >= " + std::to_string(r) +
                     ", got " + shape_str(s));
  }
}

template <typename T>
void ensure_like(Tensor<T>& grad, const Shape& shape) {
  if (grad.empty()) grad = Tensor<T>(shape);
  require_same_shape(grad.shape(), shape, "gradient");
}

}  // namespace

// ---------------------------------------------------------------------------
// conv1d_valid. Rows t..t+f-1 of a [l x e] input are contiguous, so each
// output row is the flattened window times the kernel viewed as [(f*e) x n].

template <typename T>
Tensor<T> conv1d_valid(const Tensor<T>& x, const Tensor<T>& kernel,
                       const Tensor<T>& bias) {
  require_rank_at_least(x.shape(), 2, "conv1d_valid");
  if (kernel.rank() != 3) throw ShapeError("conv1d_valid: kernel must be [f x e x n]");
  const std::size_t l = x.shape()[x.rank() - 2], e = x.shape().back();
  const std::size_t f = kernel.dim(0), n = kernel.dim(2);
  if (kernel.dim(1) != e) {
    throw ShapeError("conv1d_valid: kernel width " + std::to_string(kernel.dim(1)) +
                     " != input width " + std::to_string(e));
  }
  if (l < f) {
    throw ShapeError("conv1d_valid: sequence length " + std::to_string(l) +
                     " shorter than filter length " + std::to_string(f));
  }
  if (bias.size() != n) throw ShapeError("conv1d_valid: bias size != filter count");
  const std::size_t batch = leading_size(x.shape(), 2), out_len = l - f + 1;
  Shape out_shape = leading_shape(x.shape(), 2);
  out_shape.push_back(out_len);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  const T* xp = x.ptr();
  const T* kp = kernel.ptr();
  const T* bp = bias.ptr();
  T* op = out.ptr();
  const std::size_t window = f * e;
  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      for (std::size_t t = 0; t < out_len; ++t) {
        T* row = op + (b * out_len + t) * n;
        std::copy(bp, bp + n, row);
        const T* win = xp + (b * l + t) * e;
        for (std::size_t p = 0; p < window; ++p) {
          const T xv = win[p];
          if (xv == T(0)) continue;
          const T* kr = kp + p * n;
          for (std::size_t o = 0; o < n; ++o) row[o] += xv * kr[o];
        }
      }
    }
  });
  return out;
}

template <typename T>
void conv1d_valid_backward(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>& grad_out, Tensor<T>* grad_x,
                           Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const std::size_t l = x.shape()[x.rank() - 2], e = x.shape().back();
  const std::size_t f = kernel.dim(0), n = kernel.dim(2);
  const std::size_t batch = leading_size(x.shape(), 2), out_len = l - f + 1;
  const std::size_t window = f * e;
  const T* xp = x.ptr();
  const T* kp = kernel.ptr();
  const T* gp = grad_out.ptr();

  if (grad_bias) {
    ensure_like(*grad_bias, Shape{n});
    T* gb = grad_bias->ptr();
    for (std::size_t r = 0; r < batch * out_len; ++r)
      for (std::size_t o = 0; o < n; ++o) gb[o] += gp[r * n + o];
  }
  if (grad_kernel) {
    ensure_like(*grad_kernel, kernel.shape());
    T* gk = grad_kernel->ptr();
    const std::size_t blocks = (window + kRowBlock - 1) / kRowBlock;
    parallel_for(blocks, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t blk = lo; blk < hi; ++blk) {
        const std::size_t p0 = blk * kRowBlock, p1 = std::min(window, p0 + kRowBlock);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t t = 0; t < out_len; ++t) {
            const T* win = xp + (b * l + t) * e;
            const T* g = gp + (b * out_len + t) * n;
            for (std::size_t p = p0; p < p1; ++p) {
              const T xv = win[p];
              if (xv == T(0)) continue;
              T* kr = gk + p * n;
              for (std::size_t o = 0; o < n; ++o) kr[o] += xv * g[o];
            }
          }
        }
      }
    });
  }
  if (grad_x) {
    ensure_like(*grad_x, x.shape());
    T* gx = grad_x->ptr();
    parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t b = lo; b < hi; ++b) {
        for (std::size_t t = 0; t < out_len; ++t) {
          T* win = gx + (b * l + t) * e;
          const T* g = gp + (b * out_len + t) * n;
          for (std::size_t p = 0; p < window; ++p) {
            const T* kr = kp + p * n;
            T acc = 0;
            for (std::size_t o = 0; o < n; ++o) acc += g[o] * kr[o];
            win[p] += acc;
          }
        }
      }
    });
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = v > T(0) ? v : std::expm1(v);
  }
  return out;
}

template <typename T>
void elu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Tensor<T>& grad_x) {
  ensure_like(grad_x, x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    grad_x[i] += grad_out[i] * (v >= T(0) ? T(1) : std::exp(v));
  }
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require_rank_at_least(logits.shape(), 1, "softmax_rows");
  const std::size_t k = logits.shape().back(), rows = logits.size() / k;
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = logits.ptr() + r * k;
    T* o = out.ptr() + r * k;
    const T mx = *std::max_element(in, in + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
  }
  return out;
}

template <typename T>
void softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& grad_out,
                           Tensor<T>& grad_x) {
  ensure_like(grad_x, y.shape());
  const std::size_t k = y.shape().back(), rows = y.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y.ptr() + r * k;
    const T* g = grad_out.ptr() + r * k;
    T dot = 0;
    for (std::size_t j = 0; j < k; ++j) dot += yr[j] * g[j];
    T* gx = grad_x.ptr() + r * k;
    for (std::size_t j = 0; j < k; ++j) gx[j] += yr[j] * (g[j] - dot);
  }
}

// ---------------------------------------------------------------------------
// squash: v = g(n) s with g(n) = n^2 / ((1 + n^2)(n + eps)), n = |s|.

template <typename T>
Tensor<T> squash(const Tensor<T>& s) {
  require_rank_at_least(s.shape(), 1, "squash");
  const std::size_t d = s.shape().back(), rows = s.size() / d;
  const T eps = static_cast<T>(kSquashEps);
  Tensor<T> out(s.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = s.ptr() + r * d;
    T sq = 0;
    for (std::size_t i = 0; i < d; ++i) sq += in[i] * in[i];
    const T norm = std::sqrt(sq);
    const T scale = sq / ((T(1) + sq) * (norm + eps));
    T* o = out.ptr() + r * d;
    for (std::size_t i = 0; i < d; ++i) o[i] = scale * in[i];
  }
  return out;
}

template <typename T>
void squash_backward(const Tensor<T>& s, const Tensor<T>& grad_out, Tensor<T>& grad_s) {
  ensure_like(grad_s, s.shape());
  const std::size_t d = s.shape().back(), rows = s.size() / d;
  const T eps = static_cast<T>(kSquashEps);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = s.ptr() + r * d;
    const T* g = grad_out.ptr() + r * d;
    T* gs = grad_s.ptr() + r * d;
    T sq = 0, dot = 0;
    for (std::size_t i = 0; i < d; ++i) {
      sq += in[i] * in[i];
      dot += in[i] * g[i];
    }
    const T n = std::sqrt(sq);
    const T denom = (T(1) + sq) * (n + eps);
    const T scale = sq / denom;
    // g'(n) / n, from the quotient rule on n^2 / ((1 + n^2)(n + eps)).
    T radial = 0;
    if (n > T(0)) {
      const T ddenom = T(2) * n * (n + eps) + (T(1) + sq);
      const T dscale = (T(2) * n * denom - sq * ddenom) / (denom * denom);
      radial = dscale / n;
    }
    for (std::size_t i = 0; i < d; ++i) gs[i] += scale * g[i] + radial * dot * in[i];
  }
}

template <typename T>
Tensor<T> norm_last(const Tensor<T>& x) {
  require_rank_at_least(x.shape(), 2, "norm_last");
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  Tensor<T> out(leading_shape(x.shape(), 1));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * d;
    T sq = 0;
    for (std::size_t i = 0; i < d; ++i) sq += in[i] * in[i];
    out[r] = std::sqrt(sq);
  }
  return out;
}

template <typename T>
void norm_last_backward(const Tensor<T>& x, const Tensor<T>& norms,
                        const Tensor<T>& grad_out, Tensor<T>& grad_x) {
  ensure_like(grad_x, x.shape());
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    if (norms[r] == T(0)) continue;
    const T f = grad_out[r] / norms[r];
    const T* in = x.ptr() + r * d;
    T* gx = grad_x.ptr() + r * d;
    for (std::size_t i = 0; i < d; ++i) gx[i] += f * in[i];
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool_rows(const Tensor<T>& x, std::size_t pool) {
  require_rank_at_least(x.shape(), 2, "maxpool_rows");
  if (pool == 0) throw ShapeError("maxpool_rows: pool size must be positive");
  const std::size_t l = x.shape()[x.rank() - 2], c = x.shape().back();
  const std::size_t out_len = l / pool;
  if (out_len == 0) {
    throw ShapeError("maxpool_rows: " + std::to_string(l) + " rows < pool " +
                     std::to_string(pool));
  }
  const std::size_t batch = leading_size(x.shape(), 2);
  Shape shape = leading_shape(x.shape(), 2);
  shape.push_back(out_len);
  shape.push_back(c);
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) {
        T best = x[(b * l + t * pool) * c + ch];
        for (std::size_t q = 1; q < pool; ++q)
          best = std::max(best, x[(b * l + t * pool + q) * c + ch]);
        out[(b * out_len + t) * c + ch] = best;
      }
  return out;
}

template <typename T>
void maxpool_rows_backward(const Tensor<T>& x, std::size_t pool,
                           const Tensor<T>& grad_out, Tensor<T>& grad_x) {
  ensure_like(grad_x, x.shape());
  const std::size_t l = x.shape()[x.rank() - 2], c = x.shape().back();
  const std::size_t out_len = l / pool, batch = leading_size(x.shape(), 2);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t arg = b * l + t * pool;
        for (std::size_t q = 1; q < pool; ++q) {
          const std::size_t row = b * l + t * pool + q;
          if (x[row * c + ch] > x[arg * c + ch]) arg = row;
        }
        grad_x[arg * c + ch] += grad_out[(b * out_len + t) * c + ch];
      }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2) throw ShapeError("linear: input must be [B x in], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.shape().back();
  if (weight.size() != in * out_dim) {
    throw ShapeError("linear: weight " + shape_str(weight.shape()) +
                     " does not map " + std::to_string(in) + " inputs");
  }
  if (bias.size() != out_dim) throw ShapeError("linear: bias size != output size");
  Tensor<T> out({batch, out_dim});
  const T* xp = x.ptr();
  const T* wp = weight.ptr();
  T* op = out.ptr();
  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) std::copy(bias.ptr(), bias.ptr() + out_dim, op + b * out_dim);
    for (std::size_t p0 = 0; p0 < in; p0 += kRowBlock) {
      const std::size_t p1 = std::min(in, p0 + kRowBlock);
      for (std::size_t b = lo; b < hi; ++b) {
        T* row = op + b * out_dim;
        for (std::size_t p = p0; p < p1; ++p) {
          const T xv = xp[b * in + p];
          if (xv == T(0)) continue;
          const T* wr = wp + p * out_dim;
          for (std::size_t o = 0; o < out_dim; ++o) row[o] += xv * wr[o];
        }
      }
    }
  });
  return out;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x,
                     Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.shape().back();
  const T* xp = x.ptr();
  const T* wp = weight.ptr();
  const T* gp = grad_out.ptr();
  if (grad_bias) {
    ensure_like(*grad_bias, Shape{out_dim});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_dim; ++o) (*grad_bias)[o] += gp[b * out_dim + o];
  }
  if (grad_weight) {
    ensure_like(*grad_weight, weight.shape());
    T* gw = grad_weight->ptr();
    parallel_for(in, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) {
        T* wr = gw + p * out_dim;
        for (std::size_t b = 0; b < batch; ++b) {
          const T xv = xp[b * in + p];
          if (xv == T(0)) continue;
          const T* g = gp + b * out_dim;
          for (std::size_t o = 0; o < out_dim; ++o) wr[o] += xv * g[o];
        }
      }
    }, 64);
  }
  if (grad_x) {
    ensure_like(*grad_x, x.shape());
    T* gx = grad_x->ptr();
    parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p0 = 0; p0 < in; p0 += kRowBlock) {
        const std::size_t p1 = std::min(in, p0 + kRowBlock);
        for (std::size_t b = lo; b < hi; ++b) {
          const T* g = gp + b * out_dim;
          for (std::size_t p = p0; p < p1; ++p) {
            const T* wr = wp + p * out_dim;
            T acc = 0;
            for (std::size_t o = 0; o < out_dim; ++o) acc += g[o] * wr[o];
            gx[b * in + p] += acc;
          }
        }
      }
    });
  }
}

// ---------------------------------------------------------------------------
// Routing kernels.

template <typename T>
Tensor<T> predict_upper(const Tensor<T>& h, const Tensor<T>& weights) {
  require_rank_at_least(h.shape(), 2, "predict_upper");
  if (weights.rank() != 4) throw ShapeError("predict_upper: weights must be [a x k x M x N]");
  const std::size_t a = weights.dim(0), k = weights.dim(1), m = weights.dim(2),
                    n = weights.dim(3);
  if (h.shape()[h.rank() - 2] != a || h.shape().back() != m) {
    throw ShapeError("predict_upper: capsules " + shape_str(h.shape()) +
                     " do not fit weights " + shape_str(weights.shape()));
  }
  const std::size_t batch = leading_size(h.shape(), 2);
  Shape shape = leading_shape(h.shape(), 2);
  shape.insert(shape.end(), {a, k, n});
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a; ++i) {
      const T* hi = h.ptr() + (b * a + i) * m;
      for (std::size_t j = 0; j < k; ++j) {
        T* o = out.ptr() + ((b * a + i) * k + j) * n;
        const T* w = weights.ptr() + (i * k + j) * m * n;
        for (std::size_t mm = 0; mm < m; ++mm) {
          const T hv = hi[mm];
          for (std::size_t nn = 0; nn < n; ++nn) o[nn] += hv * w[mm * n + nn];
        }
      }
    }
  return out;
}

template <typename T>
void predict_upper_backward(const Tensor<T>& h, const Tensor<T>& weights,
                            const Tensor<T>& grad_out, Tensor<T>* grad_h,
                            Tensor<T>* grad_weights) {
  const std::size_t a = weights.dim(0), k = weights.dim(1), m = weights.dim(2),
                    n = weights.dim(3);
  const std::size_t batch = leading_size(h.shape(), 2);
  if (grad_h) ensure_like(*grad_h, h.shape());
  if (grad_weights) ensure_like(*grad_weights, weights.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a; ++i) {
      const T* hi = h.ptr() + (b * a + i) * m;
      for (std::size_t j = 0; j < k; ++j) {
        const T* g = grad_out.ptr() + ((b * a + i) * k + j) * n;
        const T* w = weights.ptr() + (i * k + j) * m * n;
        for (std::size_t mm = 0; mm < m; ++mm) {
          if (grad_h) {
            T acc = 0;
            for (std::size_t nn = 0; nn < n; ++nn) acc += g[nn] * w[mm * n + nn];
            (*grad_h)[(b * a + i) * m + mm] += acc;
          }
          if (grad_weights) {
            T* gw = grad_weights->ptr() + (i * k + j) * m * n + mm * n;
            const T hv = hi[mm];
            for (std::size_t nn = 0; nn < n; ++nn) gw[nn] += hv * g[nn];
          }
        }
      }
    }
}

template <typename T>
Tensor<T> route_sum(const Tensor<T>& u) {
  require_rank_at_least(u.shape(), 3, "route_sum");
  const std::size_t r = u.rank();
  const std::size_t a = u.dim(r - 3), k = u.dim(r - 2), n = u.dim(r - 1);
  const std::size_t batch = leading_size(u.shape(), 3);
  Shape shape = leading_shape(u.shape(), 3);
  shape.insert(shape.end(), {k, n});
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t jn = 0; jn < k * n; ++jn)
        out[b * k * n + jn] += u[(b * a + i) * k * n + jn];
  return out;
}

template <typename T>
void route_sum_backward(const Tensor<T>& grad_out, Tensor<T>& grad_u) {
  const std::size_t r = grad_u.rank();
  const std::size_t a = grad_u.dim(r - 3), kn = grad_u.dim(r - 2) * grad_u.dim(r - 1);
  const std::size_t batch = leading_size(grad_u.shape(), 3);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t jn = 0; jn < kn; ++jn)
        grad_u[(b * a + i) * kn + jn] += grad_out[b * kn + jn];
}

namespace {
struct RouteDims {
  std::size_t batch, a, k, n;
};

template <typename T>
RouteDims route_dims(const Tensor<T>& c, const Tensor<T>& u, const char* op) {
  require_rank_at_least(u.shape(), 3, op);
  const std::size_t r = u.rank();
  RouteDims d{leading_size(u.shape(), 3), u.dim(r - 3), u.dim(r - 2), u.dim(r - 1)};
  if (c.size() != d.batch * d.a * d.k) {
    throw ShapeError(std::string(op) + ": " + shape_str(c.shape()) +
                     " does not match " + shape_str(u.shape()));
  }
  return d;
}
}  // namespace

template <typename T>
Tensor<T> weighted_route_sum(const Tensor<T>& c, const Tensor<T>& u) {
  const RouteDims d = route_dims(c, u, "weighted_route_sum");
  Shape shape = leading_shape(u.shape(), 3);
  shape.insert(shape.end(), {d.k, d.n});
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t i = 0; i < d.a; ++i)
      for (std::size_t j = 0; j < d.k; ++j) {
        const T cij = c[(b * d.a + i) * d.k + j];
        const T* up = u.ptr() + ((b * d.a + i) * d.k + j) * d.n;
        T* o = out.ptr() + (b * d.k + j) * d.n;
        for (std::size_t x = 0; x < d.n; ++x) o[x] += cij * up[x];
      }
  return out;
}

template <typename T>
void weighted_route_sum_backward(const Tensor<T>& c, const Tensor<T>& u,
                                 const Tensor<T>& grad_out, Tensor<T>* grad_c,
                                 Tensor<T>* grad_u) {
  const RouteDims d = route_dims(c, u, "weighted_route_sum");
  if (grad_c) ensure_like(*grad_c, c.shape());
  if (grad_u) ensure_like(*grad_u, u.shape());
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t i = 0; i < d.a; ++i)
      for (std::size_t j = 0; j < d.k; ++j) {
        const std::size_t ij = (b * d.a + i) * d.k + j;
        const T* up = u.ptr() + ij * d.n;
        const T* g = grad_out.ptr() + (b * d.k + j) * d.n;
        if (grad_c) {
          T acc = 0;
          for (std::size_t x = 0; x < d.n; ++x) acc += g[x] * up[x];
          (*grad_c)[ij] += acc;
        }
        if (grad_u) {
          T* gu = grad_u->ptr() + ij * d.n;
          for (std::size_t x = 0; x < d.n; ++x) gu[x] += c[ij] * g[x];
        }
      }
}

template <typename T>
Tensor<T> agreement(const Tensor<T>& v, const Tensor<T>& u) {
  require_rank_at_least(u.shape(), 3, "agreement");
  const std::size_t r = u.rank();
  const std::size_t a = u.dim(r - 3), k = u.dim(r - 2), n = u.dim(r - 1);
  const std::size_t batch = leading_size(u.shape(), 3);
  if (v.size() != batch * k * n) {
    throw ShapeError("agreement: " + shape_str(v.shape()) + " does not match " +
                     shape_str(u.shape()));
  }
  Tensor<T> out(leading_shape(u.shape(), 1));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const T* up = u.ptr() + ((b * a + i) * k + j) * n;
        const T* vp = v.ptr() + (b * k + j) * n;
        T acc = 0;
        for (std::size_t x = 0; x < n; ++x) acc += vp[x] * up[x];
        out[(b * a + i) * k + j] = acc;
      }
  return out;
}

template <typename T>
void agreement_backward(const Tensor<T>& v, const Tensor<T>& u,
                        const Tensor<T>& grad_out, Tensor<T>* grad_v,
                        Tensor<T>* grad_u) {
  const std::size_t r = u.rank();
  const std::size_t a = u.dim(r - 3), k = u.dim(r - 2), n = u.dim(r - 1);
  const std::size_t batch = leading_size(u.shape(), 3);
  if (grad_v) ensure_like(*grad_v, v.shape());
  if (grad_u) ensure_like(*grad_u, u.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t ij = (b * a + i) * k + j;
        const T g = grad_out[ij];
        const T* up = u.ptr() + ij * n;
        const T* vp = v.ptr() + (b * k + j) * n;
        if (grad_v) {
          T* gv = grad_v->ptr() + (b * k + j) * n;
          for (std::size_t x = 0; x < n; ++x) gv[x] += g * up[x];
        }
        if (grad_u) {
          T* gu = grad_u->ptr() + ij * n;
          for (std::size_t x = 0; x < n; ++x) gu[x] += g * vp[x];
        }
      }
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  ensure_like(y, x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

#define CAPSTEXT_INSTANTIATE(T)                                                      \
  template Tensor<T> conv1d_valid(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template void conv1d_valid_backward(const Tensor<T>&, const Tensor<T>&,           \
                                      const Tensor<T>&, Tensor<T>*, Tensor<T>*,     \
                                      Tensor<T>*);                                  \
  template Tensor<T> elu(const Tensor<T>&);                                         \
  template void elu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);       \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                \
  template void softmax_rows_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&); \
  template Tensor<T> squash(const Tensor<T>&);                                      \
  template void squash_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);    \
  template Tensor<T> norm_last(const Tensor<T>&);                                   \
  template void norm_last_backward(const Tensor<T>&, const Tensor<T>&,              \
                                   const Tensor<T>&, Tensor<T>&);                   \
  template Tensor<T> maxpool_rows(const Tensor<T>&, std::size_t);                   \
  template void maxpool_rows_backward(const Tensor<T>&, std::size_t,                \
                                      const Tensor<T>&, Tensor<T>&);                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);                \
  template Tensor<T> predict_upper(const Tensor<T>&, const Tensor<T>&);             \
  template void predict_upper_backward(const Tensor<T>&, const Tensor<T>&,          \
                                       const Tensor<T>&, Tensor<T>*, Tensor<T>*);   \
  template Tensor<T> route_sum(const Tensor<T>&);                                   \
  template void route_sum_backward(const Tensor<T>&, Tensor<T>&);                   \
  template Tensor<T> weighted_route_sum(const Tensor<T>&, const Tensor<T>&);        \
  template void weighted_route_sum_backward(const Tensor<T>&, const Tensor<T>&,     \
                                            const Tensor<T>&, Tensor<T>*, Tensor<T>*); \
  template Tensor<T> agreement(const Tensor<T>&, const Tensor<T>&);                 \
  template void agreement_backward(const Tensor<T>&, const Tensor<T>&,              \
                                   const Tensor<T>&, Tensor<T>*, Tensor<T>*);       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                       \
  template void axpy(T, const Tensor<T>&, Tensor<T>&);

CAPSTEXT_INSTANTIATE(float)
CAPSTEXT_INSTANTIATE(double)

#undef CAPSTEXT_INSTANTIATE

}  // namespace capstext::kernels

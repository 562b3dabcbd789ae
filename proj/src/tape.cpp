#include "capstext/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "capstext/kernels.hpp"

namespace capstext {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(std::string name, const Tensor<T>& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  param_names_.push_back(std::move(name));
  param_nodes_.push_back(nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const std::size_t> inputs,
                       BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
std::vector<Tensor<T>> Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ContractError("backward: loss recorded on another tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(value(loss.id).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  visited_.clear();
  if (nodes_[loss.id].requires_grad) {
    grad(loss.id).fill(T(1));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      visited_.push_back(id);
      n.backward(*this, id);
    }
  }
  std::vector<Tensor<T>> out;
  out.reserve(param_nodes_.size());
  for (std::size_t id : param_nodes_) {
    Node& n = nodes_[id];
    out.push_back(n.grad.empty() ? Tensor<T>(value(id).shape()) : std::move(n.grad));
    n.grad = Tensor<T>();
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

namespace ad {
namespace {

template <typename T>
Tensor<T>* grad_if(Tape<T>& t, std::size_t id) {
  return t.requires_grad(id) ? &t.grad(id) : nullptr;
}

template <typename T, typename... Ids>
Var<T> push(Tape<T>* tape, Tensor<T> value, typename Tape<T>::BackwardFn fn, Ids... ids) {
  const std::array<std::size_t, sizeof...(Ids)> in{ids...};
  return tape->record(std::move(value), in, std::move(fn));
}

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

}  // namespace

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> kernel, Var<T> bias) {
  same_tape(x, kernel);
  same_tape(x, bias);
  auto out = kernels::conv1d_valid(x.value(), kernel.value(), bias.value());
  const std::size_t xi = x.id, ki = kernel.id, bi = bias.id;
  return push<T>(x.tape, std::move(out), [xi, ki, bi](Tape<T>& t, std::size_t self) {
    kernels::conv1d_valid_backward(t.value(xi), t.value(ki), t.grad(self), grad_if(t, xi),
                                   grad_if(t, ki), grad_if(t, bi));
  }, xi, ki, bi);
}

template <typename T>
Var<T> elu(Var<T> x) {
  const std::size_t xi = x.id;
  return push<T>(x.tape, kernels::elu(x.value()), [xi](Tape<T>& t, std::size_t self) {
    kernels::elu_backward(t.value(xi), t.grad(self), t.grad(xi));
  }, xi);
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const std::size_t xi = x.id;
  return push<T>(x.tape, kernels::softmax_rows(x.value()), [xi](Tape<T>& t, std::size_t self) {
    kernels::softmax_rows_backward(t.value(self), t.grad(self), t.grad(xi));
  }, xi);
}

template <typename T>
Var<T> squash(Var<T> s) {
  const std::size_t si = s.id;
  return push<T>(s.tape, kernels::squash(s.value()), [si](Tape<T>& t, std::size_t self) {
    kernels::squash_backward(t.value(si), t.grad(self), t.grad(si));
  }, si);
}

template <typename T>
Var<T> norm_last(Var<T> x) {
  const std::size_t xi = x.id;
  return push<T>(x.tape, kernels::norm_last(x.value()), [xi](Tape<T>& t, std::size_t self) {
    kernels::norm_last_backward(t.value(xi), t.value(self), t.grad(self), t.grad(xi));
  }, xi);
}

template <typename T>
Var<T> maxpool_rows(Var<T> x, std::size_t pool) {
  const std::size_t xi = x.id;
  return push<T>(x.tape, kernels::maxpool_rows(x.value(), pool),
                 [xi, pool](Tape<T>& t, std::size_t self) {
                   kernels::maxpool_rows_backward(t.value(xi), pool, t.grad(self), t.grad(xi));
                 }, xi);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  same_tape(x, weight);
  same_tape(x, bias);
  auto out = kernels::linear(x.value(), weight.value(), bias.value());
  const std::size_t xi = x.id, wi = weight.id, bi = bias.id;
  return push<T>(x.tape, std::move(out), [xi, wi, bi](Tape<T>& t, std::size_t self) {
    kernels::linear_backward(t.value(xi), t.value(wi), t.grad(self), grad_if(t, xi),
                             grad_if(t, wi), grad_if(t, bi));
  }, xi, wi, bi);
}

template <typename T>
Var<T> predict_upper(Var<T> h, Var<T> weights) {
  same_tape(h, weights);
  auto out = kernels::predict_upper(h.value(), weights.value());
  const std::size_t hi = h.id, wi = weights.id;
  return push<T>(h.tape, std::move(out), [hi, wi](Tape<T>& t, std::size_t self) {
    kernels::predict_upper_backward(t.value(hi), t.value(wi), t.grad(self), grad_if(t, hi),
                                    grad_if(t, wi));
  }, hi, wi);
}

template <typename T>
Var<T> route_sum(Var<T> u) {
  const std::size_t ui = u.id;
  return push<T>(u.tape, kernels::route_sum(u.value()), [ui](Tape<T>& t, std::size_t self) {
    kernels::route_sum_backward(t.grad(self), t.grad(ui));
  }, ui);
}

template <typename T>
Var<T> weighted_route_sum(Var<T> c, Var<T> u) {
  same_tape(c, u);
  auto out = kernels::weighted_route_sum(c.value(), u.value());
  const std::size_t ci = c.id, ui = u.id;
  return push<T>(c.tape, std::move(out), [ci, ui](Tape<T>& t, std::size_t self) {
    kernels::weighted_route_sum_backward(t.value(ci), t.value(ui), t.grad(self),
                                         grad_if(t, ci), grad_if(t, ui));
  }, ci, ui);
}

template <typename T>
Var<T> agreement(Var<T> v, Var<T> u) {
  same_tape(v, u);
  auto out = kernels::agreement(v.value(), u.value());
  const std::size_t vi = v.id, ui = u.id;
  return push<T>(v.tape, std::move(out), [vi, ui](Tape<T>& t, std::size_t self) {
    kernels::agreement_backward(t.value(vi), t.value(ui), t.grad(self), grad_if(t, vi),
                                grad_if(t, ui));
  }, vi, ui);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  const std::size_t ai = a.id, bi = b.id;
  return push<T>(a.tape, kernels::add(a.value(), b.value()), [ai, bi](Tape<T>& t, std::size_t self) {
    if (t.requires_grad(ai)) kernels::axpy(T(1), t.grad(self), t.grad(ai));
    if (t.requires_grad(bi)) kernels::axpy(T(1), t.grad(self), t.grad(bi));
  }, ai, bi);
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  const std::size_t ai = a.id, bi = b.id;
  return push<T>(a.tape, kernels::mul(a.value(), b.value()), [ai, bi](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(ai)) {
      Tensor<T>& ga = t.grad(ai);
      const Tensor<T>& bv = t.value(bi);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      Tensor<T>& gb = t.grad(bi);
      const Tensor<T>& av = t.value(ai);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  }, ai, bi);
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  const std::size_t xi = x.id;
  return push<T>(x.tape, std::move(out), [xi, factor](Tape<T>& t, std::size_t self) {
    kernels::axpy(factor, t.grad(self), t.grad(xi));
  }, xi);
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  const std::size_t xi = x.id;
  return push<T>(x.tape, x.value().reshaped(std::move(shape)), [xi](Tape<T>& t, std::size_t self) {
    Tensor<T>& gx = t.grad(xi);
    const Tensor<T>& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, xi);
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::int32_t> ids, std::size_t seq_len,
                   std::int32_t skip_grad_id) {
  const Tensor<T>& tab = table.value();
  if (tab.rank() != 2) throw ShapeError("gather_rows: table must be [V x e]");
  if (seq_len == 0 || ids.size() % seq_len != 0) {
    throw ShapeError("gather_rows: id count not a multiple of sequence length");
  }
  const std::size_t rows = tab.dim(0), e = tab.dim(1);
  Tensor<T> out({ids.size() / seq_len, seq_len, e});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw LookupError("token id " + std::to_string(ids[r]) + " outside vocabulary of " +
                        std::to_string(rows));
    }
    const T* src = tab.ptr() + static_cast<std::size_t>(ids[r]) * e;
    std::copy(src, src + e, out.ptr() + r * e);
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  const std::size_t ti = table.id;
  return push<T>(table.tape, std::move(out),
                 [ti, kept = std::move(kept), e, skip_grad_id](Tape<T>& t, std::size_t self) {
                   Tensor<T>& gt = t.grad(ti);
                   const Tensor<T>& g = t.grad(self);
                   for (std::size_t r = 0; r < kept.size(); ++r) {
                     if (kept[r] == skip_grad_id) continue;
                     T* dst = gt.ptr() + static_cast<std::size_t>(kept[r]) * e;
                     const T* src = g.ptr() + r * e;
                     for (std::size_t c = 0; c < e; ++c) dst[c] += src[c];
                   }
                 }, ti);
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> maps) {
  if (maps.empty()) throw ShapeError("concat_channels: no inputs");
  std::size_t batch = 0, rows = SIZE_MAX, channels = 0;
  std::vector<std::size_t> ids, lens, widths;
  for (const Var<T>& m : maps) {
    same_tape(maps[0], m);
    const Shape& s = m.shape();
    if (s.size() != 3) throw ShapeError("concat_channels: inputs must be [B x L x C]");
    if (batch && s[0] != batch) throw ShapeError("concat_channels: batch sizes differ");
    batch = s[0];
    rows = std::min(rows, s[1]);
    channels += s[2];
    ids.push_back(m.id);
    lens.push_back(s[1]);
    widths.push_back(s[2]);
  }
  Tensor<T> out({batch, rows, channels});
  std::size_t offset = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const Tensor<T>& v = maps[m].value();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(v.ptr() + (b * lens[m] + r) * widths[m], widths[m],
                    out.ptr() + (b * rows + r) * channels + offset);
    offset += widths[m];
  }
  Tape<T>* tape = maps[0].tape;
  return tape->record(std::move(out), ids,
                      [ids, lens, widths, batch, rows, channels](Tape<T>& t, std::size_t self) {
                        const Tensor<T>& g = t.grad(self);
                        std::size_t off = 0;
                        for (std::size_t m = 0; m < ids.size(); ++m) {
                          if (t.requires_grad(ids[m])) {
                            Tensor<T>& gm = t.grad(ids[m]);
                            for (std::size_t b = 0; b < batch; ++b)
                              for (std::size_t r = 0; r < rows; ++r) {
                                const T* src = g.ptr() + (b * rows + r) * channels + off;
                                T* dst = gm.ptr() + (b * lens[m] + r) * widths[m];
                                for (std::size_t c = 0; c < widths[m]; ++c) dst[c] += src[c];
                              }
                          }
                          off += widths[m];
                        }
                      });
}

template <typename T>
Var<T> mask_capsules(Var<T> v, std::span<const int> labels) {
  const Shape& s = v.shape();
  if (s.size() != 3 || s[0] != labels.size()) {
    throw ShapeError("mask_capsules: expected [B x k x N] with B labels, got " + shape_str(s));
  }
  const std::size_t batch = s[0], k = s[1], n = s[2];
  Tensor<T> out({batch, k * n});
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw LookupError("mask_capsules: class " + std::to_string(labels[b]) + " out of range");
    }
    const std::size_t off = b * k * n + static_cast<std::size_t>(labels[b]) * n;
    std::copy_n(v.value().ptr() + off, n, out.ptr() + off);
  }
  std::vector<int> kept(labels.begin(), labels.end());
  const std::size_t vi = v.id;
  return push<T>(v.tape, std::move(out), [vi, kept = std::move(kept), k, n](Tape<T>& t, std::size_t self) {
    Tensor<T>& gv = t.grad(vi);
    const Tensor<T>& g = t.grad(self);
    for (std::size_t b = 0; b < kept.size(); ++b) {
      const std::size_t off = b * k * n + static_cast<std::size_t>(kept[b]) * n;
      for (std::size_t x = 0; x < n; ++x) gv[off + x] += g[off + x];
    }
  }, vi);
}

template <typename T>
Var<T> margin_loss(Var<T> norms, std::span<const int> labels, T m_plus, T m_minus, T lambda) {
  const Tensor<T>& nv = norms.value();
  if (nv.rank() != 2 || nv.dim(0) != labels.size()) {
    throw ShapeError("margin_loss: expected [B x k] norms with B labels, got " +
                     shape_str(nv.shape()));
  }
  const std::size_t batch = nv.dim(0), k = nv.dim(1);
  Tensor<T> dloss(nv.shape());
  T total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw LookupError("margin_loss: label " + std::to_string(labels[b]) + " outside " +
                        std::to_string(k) + " classes");
    }
    for (std::size_t j = 0; j < k; ++j) {
      const T len = nv(b, j);
      if (static_cast<int>(j) == labels[b]) {
        const T gap = std::max(T(0), m_plus - len);
        total += gap * gap;
        dloss(b, j) = -T(2) * gap;
      } else {
        const T gap = std::max(T(0), len - m_minus);
        total += lambda * gap * gap;
        dloss(b, j) = T(2) * lambda * gap;
      }
    }
  }
  const T inv = T(1) / static_cast<T>(batch);
  const std::size_t ni = norms.id;
  return push<T>(norms.tape, Tensor<T>::scalar(total * inv),
                 [ni, dloss = std::move(dloss), inv](Tape<T>& t, std::size_t self) {
                   kernels::axpy(t.grad(self)[0] * inv, dloss, t.grad(ni));
                 }, ni);
}

template <typename T>
Var<T> mse(Var<T> x, const Tensor<T>& target) {
  const Tensor<T>& xv = x.value();
  if (xv.size() != target.size()) {
    throw ShapeError("mse: " + shape_str(xv.shape()) + " vs target " + shape_str(target.shape()));
  }
  Tensor<T> diff(xv.shape());
  T total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    diff[i] = xv[i] - target[i];
    total += diff[i] * diff[i];
  }
  const T inv = T(1) / static_cast<T>(xv.size());
  const std::size_t xi = x.id;
  return push<T>(x.tape, Tensor<T>::scalar(total * inv),
                 [xi, diff = std::move(diff), inv](Tape<T>& t, std::size_t self) {
                   kernels::axpy(T(2) * inv * t.grad(self)[0], diff, t.grad(xi));
                 }, xi);
}

template <typename T>
Var<T> sum_squares(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v * v;
  const std::size_t xi = x.id;
  return push<T>(x.tape, Tensor<T>::scalar(total), [xi](Tape<T>& t, std::size_t self) {
    kernels::axpy(T(2) * t.grad(self)[0], t.value(xi), t.grad(xi));
  }, xi);
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  const std::size_t xi = x.id;
  return push<T>(x.tape, Tensor<T>::scalar(total), [xi](Tape<T>& t, std::size_t self) {
    Tensor<T>& gx = t.grad(xi);
    const T g = t.grad(self)[0];
    for (auto& v : gx.data()) v += g;
  }, xi);
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  if (x.value().size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  T total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += x.value()[i] * weights[i];
  const std::size_t xi = x.id;
  return push<T>(x.tape, Tensor<T>::scalar(total), [xi, weights](Tape<T>& t, std::size_t self) {
    Tensor<T>& gx = t.grad(xi);
    const T g = t.grad(self)[0];
    for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += g * weights[i];
  }, xi);
}

#define CAPSTEXT_INSTANTIATE(T)                                                          \
  template Var<T> conv1d(Var<T>, Var<T>, Var<T>);                                       \
  template Var<T> elu(Var<T>);                                                          \
  template Var<T> softmax_rows(Var<T>);                                                 \
  template Var<T> squash(Var<T>);                                                       \
  template Var<T> norm_last(Var<T>);                                                    \
  template Var<T> maxpool_rows(Var<T>, std::size_t);                                    \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                       \
  template Var<T> predict_upper(Var<T>, Var<T>);                                        \
  template Var<T> route_sum(Var<T>);                                                    \
  template Var<T> weighted_route_sum(Var<T>, Var<T>);                                   \
  template Var<T> agreement(Var<T>, Var<T>);                                            \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                     \
  template Var<T> reshape(Var<T>, Shape);                                               \
  template Var<T> gather_rows(Var<T>, std::span<const std::int32_t>, std::size_t,       \
                              std::int32_t);                                            \
  template Var<T> concat_channels(std::span<const Var<T>>);                             \
  template Var<T> mask_capsules(Var<T>, std::span<const int>);                          \
  template Var<T> margin_loss(Var<T>, std::span<const int>, T, T, T);                   \
  template Var<T> mse(Var<T>, const Tensor<T>&);                                        \
  template Var<T> sum_squares(Var<T>);                                                  \
  template Var<T> sum(Var<T>);                                                          \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);

CAPSTEXT_INSTANTIATE(float)
CAPSTEXT_INSTANTIATE(double)

#undef CAPSTEXT_INSTANTIATE

}  // namespace ad
}  // namespace capstext

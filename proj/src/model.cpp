#include "capstext/model.hpp"

#include <algorithm>
#include <cmath>

#include "capstext/errors.hpp"
#include "capstext/kernels.hpp"
#include "capstext/optim.hpp"

namespace capstext {

// ---------------------------------------------------------------------------
// Single-document operations.

template <typename T>
Tensor<T> embed_lookup(std::span<const std::int32_t> ids, const Tensor<T>& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("embed_lookup: embeddings must be [V x e]");
  if (ids.empty()) throw ShapeError("embed_lookup: empty document");
  const std::size_t vocab = embeddings.dim(0), e = embeddings.dim(1);
  Tensor<T> out({ids.size(), e});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw LookupError("embed_lookup: id " + std::to_string(ids[t]) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
    if (ids[t] == kPadId) continue;
    const T* src = embeddings.ptr() + static_cast<std::size_t>(ids[t]) * e;
    std::copy(src, src + e, out.ptr() + t * e);
  }
  return out;
}

template <typename T>
Tensor<T> elu_gate_forward(const Tensor<T>& doc, const GateConvParams<T>& p) {
  if (p.w.shape() != p.v.shape()) throw ShapeError("elu_gate: W and V shapes differ");
  return kernels::mul(kernels::conv1d_valid(doc, p.w, p.b),
                      kernels::elu(kernels::conv1d_valid(doc, p.v, p.c)));
}

namespace {

template <typename T>
Tensor<T> concat_first_rows(const std::vector<Tensor<T>>& maps) {
  std::size_t rows = SIZE_MAX, channels = 0;
  for (const auto& m : maps) {
    rows = std::min(rows, m.dim(0));
    channels += m.dim(1);
  }
  Tensor<T> out({rows, channels});
  std::size_t off = 0;
  for (const auto& m : maps) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(m.ptr() + r * m.dim(1), m.dim(1), out.ptr() + r * channels + off);
    off += m.dim(1);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> frontend_forward(const Tensor<T>& doc, const FrontendParams<T>& p) {
  if (doc.rank() != 2) throw ShapeError("frontend_forward: document must be [l x e]");
  switch (p.variant) {
    case Frontend::kEluGate:
      return elu_gate_forward(doc, p.gate);
    case Frontend::kConvPlain:
      return kernels::elu(kernels::conv1d_valid(doc, p.plain.kernel, p.plain.bias));
    case Frontend::kMultiFilter:
    case Frontend::kMultiFilterMaxpool: {
      if (p.multi.empty()) throw ConfigError("multi-filter front-end without filters");
      std::vector<Tensor<T>> maps;
      for (const auto& conv : p.multi) {
        Tensor<T> m = kernels::elu(kernels::conv1d_valid(doc, conv.kernel, conv.bias));
        if (p.variant == Frontend::kMultiFilterMaxpool) m = kernels::maxpool_rows(m, p.pool);
        maps.push_back(std::move(m));
      }
      return concat_first_rows(maps);
    }
  }
  throw ConfigError("unknown front-end variant");
}

template <typename T>
Tensor<T> primary_capsules_forward(const Tensor<T>& features, const PrimaryCapsuleParams<T>& p) {
  if (features.rank() != 2) throw ShapeError("primary capsules: features must be [rows x n]");
  if (p.kernel.rank() != 4 || p.kernel.dim(0) != features.dim(0)) {
    throw ShapeError("primary capsules: kernel height " +
                     std::to_string(p.kernel.rank() ? p.kernel.dim(0) : 0) +
                     " != feature height " + std::to_string(features.dim(0)));
  }
  if (p.kernel.dim(2) != features.dim(1) || p.kernel.dim(3) != p.capsules * p.dim) {
    throw ShapeError("primary capsules: kernel " + shape_str(p.kernel.shape()) +
                     " does not fit features " + shape_str(features.shape()));
  }
  const Tensor<T> flat = features.reshaped({1, features.size()});
  return kernels::squash(kernels::linear(flat, p.kernel, p.bias).reshaped({p.capsules, p.dim}));
}

template <typename T>
Tensor<T> predict_upper(const Tensor<T>& h, const Tensor<T>& w_route) {
  return kernels::predict_upper(h, w_route);
}

template <typename T>
std::pair<ClassCapsules<T>, RoutingState<T>> dynamic_route(
    const Tensor<T>& h_hat, std::size_t iterations,
    const std::function<void(const RoutingState<T>&)>& observer) {
  if (iterations == 0) throw ConfigError("dynamic routing needs at least one iteration");
  if (h_hat.rank() != 3) throw ShapeError("dynamic_route: predictions must be [a x k x N]");
  RoutingState<T> state;
  state.b_logits = Tensor<T>({h_hat.dim(0), h_hat.dim(1)});
  ClassCapsules<T> out;
  for (std::size_t r = 0; r < iterations; ++r) {
    state.c_coef = kernels::softmax_rows(state.b_logits);
    out.v = kernels::squash(kernels::weighted_route_sum(state.c_coef, h_hat));
    state.b_logits = kernels::add(state.b_logits, kernels::agreement(out.v, h_hat));
    state.iteration = r + 1;
    if (observer) observer(state);
  }
  return {std::move(out), std::move(state)};
}

template <typename T>
ClassCapsules<T> static_route(const Tensor<T>& h, const Tensor<T>& w_route) {
  return {kernels::squash(kernels::route_sum(kernels::predict_upper(h, w_route)))};
}

template <typename T>
std::size_t classify(const ClassCapsules<T>& v) {
  const Tensor<T> norms = kernels::norm_last(v.v);
  std::size_t best = 0;
  for (std::size_t j = 1; j < norms.size(); ++j)
    if (norms[j] > norms[best]) best = j;
  return best;
}

template <typename T>
double margin_loss(const ClassCapsules<T>& v, std::size_t label, double m_plus, double m_minus,
                   double lambda) {
  const Tensor<T> norms = kernels::norm_last(v.v);
  if (label >= norms.size()) {
    throw LookupError("margin_loss: label " + std::to_string(label) + " outside " +
                      std::to_string(norms.size()) + " classes");
  }
  double loss = 0;
  for (std::size_t j = 0; j < norms.size(); ++j) {
    const double len = static_cast<double>(norms[j]);
    if (j == label) {
      const double gap = std::max(0.0, m_plus - len);
      loss += gap * gap;
    } else {
      const double gap = std::max(0.0, len - m_minus);
      loss += lambda * gap * gap;
    }
  }
  return loss;
}

template <typename T>
Tensor<T> reconstruct_forward(const ClassCapsules<T>& v, std::size_t cls,
                              const DecoderParams<T>& d, std::size_t seq_len,
                              std::size_t embed_dim) {
  if (v.v.rank() != 2) throw ShapeError("reconstruct: capsules must be [k x N]");
  const std::size_t k = v.v.dim(0), n = v.v.dim(1);
  if (cls >= k) throw LookupError("reconstruct: class " + std::to_string(cls) + " out of range");
  if (d.w3.shape().back() != seq_len * embed_dim) {
    throw ShapeError("reconstruct: decoder emits " + std::to_string(d.w3.shape().back()) +
                     " values, document needs " + std::to_string(seq_len * embed_dim));
  }
  Tensor<T> masked({1, k * n});
  std::copy_n(v.v.ptr() + cls * n, n, masked.ptr() + cls * n);
  Tensor<T> h1 = kernels::elu(kernels::linear(masked, d.w1, d.b1));
  Tensor<T> h2 = kernels::elu(kernels::linear(h1, d.w2, d.b2));
  return kernels::linear(h2, d.w3, d.b3).reshaped({seq_len, embed_dim});
}

template <typename T>
ClassCapsules<T> capsule_dim_perturb(const ClassCapsules<T>& v, std::size_t cls, std::size_t dim,
                                     double noise, double noise_limit) {
  if (v.v.rank() != 2 || cls >= v.v.dim(0) || dim >= v.v.dim(1)) {
    throw LookupError("capsule_dim_perturb: (" + std::to_string(cls) + ", " +
                      std::to_string(dim) + ") outside capsules " + shape_str(v.v.shape()));
  }
  if (std::abs(noise) > noise_limit) {
    throw ConfigError("capsule_dim_perturb: |noise| exceeds " + std::to_string(noise_limit));
  }
  ClassCapsules<T> out = v;
  out.v(cls, dim) += static_cast<T>(noise);
  return out;
}

// ---------------------------------------------------------------------------
// Parameter layout.

std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  if (c.vocab_size < 2) throw ConfigError("vocab_size must cover the pad and unknown rows");
  validate(c);
  if (c.max_len == 0) throw ConfigError("max_len must be set before building a model");
  const std::size_t e = c.embed_dim;
  std::vector<ParamSpec> specs;
  specs.push_back({"embedding", {c.vocab_size, e}, "embedding", false});
  switch (c.frontend) {
    case Frontend::kEluGate:
      specs.push_back({"gate.W", {c.filter_size, e, c.filters}, "gate", false});
      specs.push_back({"gate.V", {c.filter_size, e, c.filters}, "gate", false});
      specs.push_back({"gate.b", {c.filters}, "gate", true});
      specs.push_back({"gate.c", {c.filters}, "gate", true});
      break;
    case Frontend::kConvPlain:
      specs.push_back({"conv.W", {c.filter_size, e, c.filters}, "gate", false});
      specs.push_back({"conv.b", {c.filters}, "gate", true});
      break;
    case Frontend::kMultiFilter:
    case Frontend::kMultiFilterMaxpool:
      for (std::size_t f : c.multi_filter_sizes) {
        const std::string base = "conv" + std::to_string(f);
        specs.push_back({base + ".W", {f, e, c.multi_filter_count}, "gate", false});
        specs.push_back({base + ".b", {c.multi_filter_count}, "gate", true});
      }
      break;
  }
  const std::size_t am = c.capsules * c.capsule_dim;
  specs.push_back({"primary.kernel", {feature_rows(c), 1, feature_channels(c), am}, "other", false});
  specs.push_back({"primary.bias", {am}, "other", true});
  specs.push_back({"route.W", {c.capsules, c.num_classes, c.capsule_dim, c.class_capsule_dim},
                   "other", false});
  if (c.decoder) {
    const std::size_t in = c.num_classes * c.class_capsule_dim;
    specs.push_back({"decoder.fc1.W", {in, c.decoder_hidden1}, "other", false});
    specs.push_back({"decoder.fc1.b", {c.decoder_hidden1}, "other", true});
    specs.push_back({"decoder.fc2.W", {c.decoder_hidden1, c.decoder_hidden2}, "other", false});
    specs.push_back({"decoder.fc2.b", {c.decoder_hidden2}, "other", true});
    specs.push_back({"decoder.fc3.W", {c.decoder_hidden2, c.max_len * e}, "other", false});
    specs.push_back({"decoder.fc3.b", {c.max_len * e}, "other", true});
  }
  return specs;
}

std::size_t trainable_parameter_count(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const ParamSpec& s : parameter_specs(cfg)) total += shape_size(s.shape);
  return total;
}

// ---------------------------------------------------------------------------
// CapsNet.

template <typename T>
CapsNet<T>::CapsNet(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  std::mt19937_64 rng(init_seed);
  std::normal_distribution<double> normal(0.0, cfg_.init_std);
  std::uniform_real_distribution<double> unif(-0.25, 0.25);
  for (ParamSpec& s : parameter_specs(cfg_)) {
    Tensor<T> value(s.shape);
    if (s.name == "embedding") {
      const std::size_t e = s.shape[1];
      for (std::size_t i = e; i < value.size(); ++i) value[i] = static_cast<T>(unif(rng));
    } else if (!s.is_bias) {
      for (auto& v : value.data()) v = static_cast<T>(normal(rng));
    }
    params_.push_back({std::move(s.name), std::move(value), std::move(s.group), s.is_bias});
  }
}

template <typename T>
CapsNet<T>::CapsNet(ModelConfig cfg, ParameterList<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto specs = parameter_specs(cfg_);
  if (specs.size() != params_.size()) {
    throw ShapeError("model expects " + std::to_string(specs.size()) + " parameters, got " +
                     std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name != params_[i].name || specs[i].shape != params_[i].value.shape()) {
      throw ShapeError("parameter " + std::to_string(i) + ": expected " + specs[i].name + " " +
                       shape_str(specs[i].shape) + ", got " + params_[i].name + " " +
                       shape_str(params_[i].value.shape()));
    }
    params_[i].group = specs[i].group;
    params_[i].is_bias = specs[i].is_bias;
  }
}

template <typename T>
const Tensor<T>& CapsNet<T>::parameter(const std::string& name) const {
  if (const auto* p = find_parameter(params_, name)) return p->value;
  throw LookupError("no parameter named '" + name + "'");
}

template <typename T>
Tensor<T>& CapsNet<T>::parameter(const std::string& name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).parameter(name));
}

template <typename T>
void CapsNet<T>::set_embeddings(const Tensor<T>& table) {
  Tensor<T>& emb = parameter("embedding");
  if (table.shape() != emb.shape()) {
    throw ShapeError("embedding table " + shape_str(table.shape()) + " vs model " +
                     shape_str(emb.shape()));
  }
  emb = table;
  std::fill_n(emb.ptr(), emb.dim(1), T(0));
}

template <typename T>
std::map<std::string, double> CapsNet<T>::group_lambdas() const {
  return {{"embedding", 0.0}, {"gate", cfg_.train.l2_gate}, {"other", cfg_.train.l2_other}};
}

template <typename T>
FrontendParams<T> CapsNet<T>::frontend_params() const {
  FrontendParams<T> p;
  p.variant = cfg_.frontend;
  p.pool = cfg_.pool_size;
  switch (cfg_.frontend) {
    case Frontend::kEluGate:
      p.gate = {parameter("gate.W"), parameter("gate.V"), parameter("gate.b"), parameter("gate.c")};
      break;
    case Frontend::kConvPlain:
      p.plain = {parameter("conv.W"), parameter("conv.b")};
      break;
    default:
      for (std::size_t f : cfg_.multi_filter_sizes) {
        const std::string base = "conv" + std::to_string(f);
        p.multi.push_back({parameter(base + ".W"), parameter(base + ".b")});
      }
  }
  return p;
}

template <typename T>
PrimaryCapsuleParams<T> CapsNet<T>::primary_params() const {
  return {parameter("primary.kernel"), parameter("primary.bias"), cfg_.capsules, cfg_.capsule_dim};
}

template <typename T>
DecoderParams<T> CapsNet<T>::decoder_params() const {
  if (!cfg_.decoder) throw ConfigError("model has no reconstruction decoder");
  return {parameter("decoder.fc1.W"), parameter("decoder.fc1.b"), parameter("decoder.fc2.W"),
          parameter("decoder.fc2.b"), parameter("decoder.fc3.W"), parameter("decoder.fc3.b")};
}

template <typename T>
ForwardResult<T> CapsNet<T>::forward(Tape<T>& tape, std::span<const std::int32_t> ids,
                                     std::span<const int> labels,
                                     const ForwardOptions<T>& opts) const {
  const std::size_t l = cfg_.max_len;
  if (ids.empty() || ids.size() % l != 0) {
    throw ShapeError("forward: " + std::to_string(ids.size()) + " ids is not a batch of length-" +
                     std::to_string(l) + " documents");
  }
  const std::size_t batch = ids.size() / l;
  if (opts.compute_loss && labels.size() != batch) {
    throw ShapeError("forward: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }

  ForwardResult<T> r;
  if (opts.bound_params.empty()) {
    for (const auto& p : params_) r.param_vars.push_back(tape.parameter(p.name, p.value));
  } else if (opts.bound_params.size() == params_.size()) {
    r.param_vars = opts.bound_params;
  } else {
    throw ContractError("forward: " + std::to_string(opts.bound_params.size()) +
                        " bound handles for " + std::to_string(params_.size()) + " parameters");
  }
  auto var = [&](const std::string& name) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return r.param_vars[i];
    throw LookupError("no parameter named '" + name + "'");
  };

  r.embedded = ad::gather_rows(var("embedding"), ids, l, kPadId);
  Var<T> features;
  switch (cfg_.frontend) {
    case Frontend::kEluGate:
      features = ad::mul(ad::conv1d(r.embedded, var("gate.W"), var("gate.b")),
                         ad::elu(ad::conv1d(r.embedded, var("gate.V"), var("gate.c"))));
      break;
    case Frontend::kConvPlain:
      features = ad::elu(ad::conv1d(r.embedded, var("conv.W"), var("conv.b")));
      break;
    case Frontend::kMultiFilter:
    case Frontend::kMultiFilterMaxpool: {
      std::vector<Var<T>> maps;
      for (std::size_t f : cfg_.multi_filter_sizes) {
        const std::string base = "conv" + std::to_string(f);
        Var<T> m = ad::elu(ad::conv1d(r.embedded, var(base + ".W"), var(base + ".b")));
        if (cfg_.frontend == Frontend::kMultiFilterMaxpool) m = ad::maxpool_rows(m, cfg_.pool_size);
        maps.push_back(m);
      }
      features = ad::concat_channels<T>(maps);
      break;
    }
  }
  if (opts.training && cfg_.train.dropout > 0.0) {
    if (!opts.rng) throw ContractError("forward: training mode needs a dropout generator");
    features = ad::mul(features, tape.constant(dropout_mask<T>(features.shape(), cfg_.train.dropout,
                                                               *opts.rng, true)));
  }

  const std::size_t a = cfg_.capsules, m = cfg_.capsule_dim;
  Var<T> flat = ad::reshape(features, {batch, features.value().size() / batch});
  Var<T> pre = ad::linear(flat, var("primary.kernel"), var("primary.bias"));
  r.primary = ad::squash(ad::reshape(pre, {batch, a, m}));

  Var<T> u = ad::predict_upper(r.primary, var("route.W"));
  if (cfg_.routing == Routing::kStatic) {
    r.class_caps = ad::squash(ad::route_sum(u));
  } else {
    if (cfg_.route_iters == 0) throw ConfigError("dynamic routing needs at least one iteration");
    Var<T> logits = tape.constant(Tensor<T>({batch, a, cfg_.num_classes}));
    for (std::size_t it = 0; it < cfg_.route_iters; ++it) {
      Var<T> coef = ad::softmax_rows(logits);
      r.class_caps = ad::squash(ad::weighted_route_sum(coef, u));
      if (it + 1 < cfg_.route_iters) logits = ad::add(logits, ad::agreement(r.class_caps, u));
    }
  }
  r.norms = ad::norm_last(r.class_caps);

  if (!opts.compute_loss) return r;

  r.margin = ad::margin_loss(r.norms, labels);
  Var<T> loss = *r.margin;
  if (cfg_.decoder) {
    Var<T> masked = ad::mask_capsules(r.class_caps, labels);
    Var<T> h1 = ad::elu(ad::linear(masked, var("decoder.fc1.W"), var("decoder.fc1.b")));
    Var<T> h2 = ad::elu(ad::linear(h1, var("decoder.fc2.W"), var("decoder.fc2.b")));
    Var<T> out = ad::linear(h2, var("decoder.fc3.W"), var("decoder.fc3.b"));
    r.recon_mse = ad::mse(out, r.embedded.value());
    loss = ad::add(loss, ad::scale(*r.recon_mse, static_cast<T>(cfg_.recon_scale)));
  }
  r.l2 = l2_penalty<T>(tape, r.param_vars, params_, group_lambdas());
  r.loss = ad::add(loss, *r.l2);
  return r;
}

template <typename T>
Tensor<T> CapsNet<T>::class_capsules(std::span<const std::int32_t> ids) const {
  Tape<T> tape;
  ForwardOptions<T> opts;
  opts.compute_loss = false;
  return forward(tape, ids, {}, opts).class_caps.value();
}

template <typename T>
std::vector<int> CapsNet<T>::predict(std::span<const std::int32_t> ids) const {
  const Tensor<T> v = class_capsules(ids);
  const std::size_t batch = v.dim(0), k = v.dim(1), n = v.dim(2);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    ClassCapsules<T> one{Tensor<T>({k, n}, std::vector<T>(v.ptr() + b * k * n, v.ptr() + (b + 1) * k * n))};
    out[b] = static_cast<int>(classify(one));
  }
  return out;
}

#define CAPSTEXT_INSTANTIATE(T)                                                              \
  template Tensor<T> embed_lookup(std::span<const std::int32_t>, const Tensor<T>&);          \
  template Tensor<T> elu_gate_forward(const Tensor<T>&, const GateConvParams<T>&);           \
  template Tensor<T> frontend_forward(const Tensor<T>&, const FrontendParams<T>&);           \
  template Tensor<T> primary_capsules_forward(const Tensor<T>&, const PrimaryCapsuleParams<T>&); \
  template Tensor<T> predict_upper(const Tensor<T>&, const Tensor<T>&);                      \
  template std::pair<ClassCapsules<T>, RoutingState<T>> dynamic_route(                       \
      const Tensor<T>&, std::size_t, const std::function<void(const RoutingState<T>&)>&);    \
  template ClassCapsules<T> static_route(const Tensor<T>&, const Tensor<T>&);                \
  template std::size_t classify(const ClassCapsules<T>&);                                    \
  template double margin_loss(const ClassCapsules<T>&, std::size_t, double, double, double); \
  template Tensor<T> reconstruct_forward(const ClassCapsules<T>&, std::size_t,               \
                                         const DecoderParams<T>&, std::size_t, std::size_t); \
  template ClassCapsules<T> capsule_dim_perturb(const ClassCapsules<T>&, std::size_t,        \
                                                std::size_t, double, double);                \
  template class CapsNet<T>;

CAPSTEXT_INSTANTIATE(float)
CAPSTEXT_INSTANTIATE(double)

#undef CAPSTEXT_INSTANTIATE

}  // namespace capstext

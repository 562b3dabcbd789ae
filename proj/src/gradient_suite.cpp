#include "capstext/gradient_suite.hpp"

#include <memory>
#include <random>

#include "capstext/errors.hpp"
#include "capstext/gradcheck.hpp"
#include "capstext/model.hpp"
#include "capstext/optim.hpp"

namespace capstext {

namespace {

using Rng = std::mt19937_64;
using VarList = std::vector<Var<double>>;

Tensor<double> randn(Shape shape, Rng& rng, double std = 1.0) {
  std::normal_distribution<double> d(0.0, std);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Problem {
  std::vector<NamedTensor> params;
  LossBuilder loss;
};

// Random projection of the output keeps every coordinate's gradient nonzero.
Var<double> project(Var<double> out, Rng& rng) {
  return ad::weighted_sum(out, randn(out.shape(), rng));
}

Problem gate_problem(Rng& rng) {
  const std::size_t f = pick(rng, 1, 3), l = f + pick(rng, 2, 6), e = pick(rng, 2, 5),
                    n = pick(rng, 2, 4);
  Problem p;
  p.params = {{"D", randn({l, e}, rng)},
              {"W", randn({f, e, n}, rng, 0.5)},
              {"V", randn({f, e, n}, rng, 0.5)},
              {"b", randn({n}, rng, 0.5)},
              {"c", randn({n}, rng, 0.5)}};
  const auto seed = rng();
  p.loss = [seed](Tape<double>&, const VarList& v) {
    Rng r(seed);
    Var<double> out = ad::mul(ad::conv1d(v[0], v[1], v[3]), ad::elu(ad::conv1d(v[0], v[2], v[4])));
    return project(out, r);
  };
  return p;
}

Problem conv_plain_problem(Rng& rng) {
  const std::size_t f = pick(rng, 1, 3), l = f + pick(rng, 2, 6), e = pick(rng, 2, 5),
                    n = pick(rng, 2, 4);
  Problem p;
  p.params = {{"D", randn({2, l, e}, rng)}, {"W", randn({f, e, n}, rng, 0.5)},
              {"b", randn({n}, rng, 0.5)}};
  const auto seed = rng();
  p.loss = [seed](Tape<double>&, const VarList& v) {
    Rng r(seed);
    return project(ad::elu(ad::conv1d(v[0], v[1], v[2])), r);
  };
  return p;
}

Problem multi_filter_problem(Rng& rng) {
  const std::size_t l = pick(rng, 8, 11), e = pick(rng, 2, 4), n = pick(rng, 2, 3);
  const std::vector<std::size_t> sizes{2, 3, 4};
  Problem p;
  p.params.push_back({"D", randn({l, e}, rng)});
  for (std::size_t f : sizes) {
    p.params.push_back({"W" + std::to_string(f), randn({f, e, n}, rng, 0.5)});
    p.params.push_back({"b" + std::to_string(f), randn({n}, rng, 0.5)});
  }
  const auto seed = rng();
  p.loss = [seed, sizes](Tape<double>&, const VarList& v) {
    Rng r(seed);
    Var<double> doc = ad::reshape(v[0], {1, v[0].shape()[0], v[0].shape()[1]});
    std::vector<Var<double>> maps;
    for (std::size_t i = 0; i < sizes.size(); ++i)
      maps.push_back(ad::maxpool_rows(ad::elu(ad::conv1d(doc, v[1 + 2 * i], v[2 + 2 * i])), 2));
    return project(ad::concat_channels<double>(maps), r);
  };
  return p;
}

Problem primary_problem(Rng& rng) {
  const std::size_t rows = pick(rng, 2, 5), ch = pick(rng, 2, 4), a = pick(rng, 2, 4),
                    m = pick(rng, 2, 5);
  Problem p;
  p.params = {{"features", randn({2, rows, ch}, rng)},
              {"kernel", randn({rows, 1, ch, a * m}, rng, 0.5)},
              {"bias", randn({a * m}, rng, 0.5)}};
  const auto seed = rng();
  p.loss = [seed, rows, ch, a, m](Tape<double>&, const VarList& v) {
    Rng r(seed);
    Var<double> pre = ad::linear(ad::reshape(v[0], {2, rows * ch}), v[1], v[2]);
    return project(ad::squash(ad::reshape(pre, {2, a, m})), r);
  };
  return p;
}

Problem squash_problem(Rng& rng) {
  Problem p;
  p.params = {{"s", randn({pick(rng, 1, 4), pick(rng, 2, 8)}, rng, 2.0)}};
  const auto seed = rng();
  p.loss = [seed](Tape<double>&, const VarList& v) {
    Rng r(seed);
    return project(ad::squash(v[0]), r);
  };
  return p;
}

Problem softmax_problem(Rng& rng) {
  Problem p;
  p.params = {{"logits", randn({pick(rng, 1, 5), pick(rng, 2, 6)}, rng, 2.0)}};
  const auto seed = rng();
  p.loss = [seed](Tape<double>&, const VarList& v) {
    Rng r(seed);
    return project(ad::softmax_rows(v[0]), r);
  };
  return p;
}

Problem margin_problem(Rng& rng) {
  const std::size_t b = pick(rng, 1, 4), k = pick(rng, 2, 6);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  Tensor<double> norms({b, k});
  std::vector<int> labels(b);
  for (auto& v : norms.data()) {
    do v = u(rng);
    while (std::abs(v - 0.9) < 1e-3 || std::abs(v - 0.1) < 1e-3);
  }
  for (auto& y : labels) y = static_cast<int>(pick(rng, 0, k - 1));
  Problem p;
  p.params = {{"norms", std::move(norms)}};
  p.loss = [labels](Tape<double>&, const VarList& v) { return ad::margin_loss(v[0], labels); };
  return p;
}

Problem l2_problem(Rng& rng) {
  ParameterList<double> plist{{"gate.W", randn({3, 2}, rng), "gate", false},
                              {"gate.b", randn({3}, rng), "gate", true},
                              {"route.W", randn({2, 2, 2}, rng), "other", false}};
  Problem p;
  for (const auto& x : plist) p.params.push_back({x.name, x.value});
  p.loss = [plist](Tape<double>& tape, const VarList& v) {
    const GroupLambdas lambdas{{"gate", 0.001}, {"other", 0.01}};
    Var<double> pen = l2_penalty<double>(tape, v, plist, lambdas);
    // Biases are unregularized, so give them a smooth term of their own.
    return ad::add(pen, ad::sum_squares(v[1]));
  };
  return p;
}

ModelConfig tiny_config(Rng& rng, Routing routing, bool decoder) {
  ModelConfig c;
  c.num_classes = pick(rng, 2, 4);
  c.vocab_size = 9;
  c.embed_dim = pick(rng, 3, 4);
  c.filters = 3;
  c.filter_size = pick(rng, 1, 3);
  c.max_len = c.filter_size + pick(rng, 2, 4);
  c.capsules = pick(rng, 2, 3);
  c.capsule_dim = pick(rng, 3, 4);
  c.class_capsule_dim = pick(rng, 3, 5);
  c.routing = routing;
  c.route_iters = 3;
  c.decoder = decoder;
  c.decoder_hidden1 = 5;
  c.decoder_hidden2 = 6;
  c.init_std = 1.0;
  c.train.l2_gate = 0.001;
  c.train.l2_other = 0.01;
  return c;
}

// Full forward pass of a tiny model with its loss. With `fixed_embedding` the
// embedding table is held constant (the reconstruction target depends on it
// but is not differentiated).
Problem model_problem(Rng& rng, Routing routing, bool decoder) {
  const ModelConfig cfg = tiny_config(rng, routing, decoder);
  auto model = std::make_shared<CapsNet<double>>(cfg, rng());
  Tensor<double> table = randn({cfg.vocab_size, cfg.embed_dim}, rng);
  model->set_embeddings(table);
  const std::size_t batch = 2;
  std::vector<std::int32_t> ids(batch * cfg.max_len);
  for (auto& id : ids) id = static_cast<std::int32_t>(pick(rng, 1, cfg.vocab_size - 1));
  std::vector<int> labels(batch);
  for (auto& y : labels) y = static_cast<int>(pick(rng, 0, cfg.num_classes - 1));

  Problem p;
  const bool fixed_embedding = decoder;
  for (const auto& prm : model->parameters()) {
    if (fixed_embedding && prm.name == "embedding") continue;
    p.params.push_back({prm.name, prm.value});
  }
  p.loss = [model, ids, labels, fixed_embedding](Tape<double>& tape, const VarList& v) {
    ForwardOptions<double> opts;
    if (fixed_embedding) {
      opts.bound_params.push_back(tape.constant(model->parameter("embedding")));
    }
    opts.bound_params.insert(opts.bound_params.end(), v.begin(), v.end());
    return *model->forward(tape, ids, labels, opts).loss;
  };
  return p;
}

Problem decoder_only_problem(Rng& rng) {
  const std::size_t k = pick(rng, 2, 4), n = pick(rng, 3, 5), h1 = 4, h2 = 5, out = pick(rng, 6, 10);
  std::vector<int> labels{static_cast<int>(pick(rng, 0, k - 1)), static_cast<int>(pick(rng, 0, k - 1))};
  Problem p;
  p.params = {{"v", randn({2, k, n}, rng, 0.3)},     {"fc1.W", randn({k * n, h1}, rng, 0.5)},
              {"fc1.b", randn({h1}, rng, 0.5)},      {"fc2.W", randn({h1, h2}, rng, 0.5)},
              {"fc2.b", randn({h2}, rng, 0.5)},      {"fc3.W", randn({h2, out}, rng, 0.5)},
              {"fc3.b", randn({out}, rng, 0.5)}};
  Tensor<double> target = randn({2, out}, rng);
  p.loss = [labels, target](Tape<double>&, const VarList& v) {
    Var<double> x = ad::mask_capsules(v[0], labels);
    x = ad::elu(ad::linear(x, v[1], v[2]));
    x = ad::elu(ad::linear(x, v[3], v[4]));
    return ad::mse(ad::linear(x, v[5], v[6]), target);
  };
  return p;
}

Problem make_problem(const std::string& layer, Rng& rng, std::size_t instance) {
  if (layer == "gate") return gate_problem(rng);
  if (layer == "conv_plain") return conv_plain_problem(rng);
  if (layer == "multi_filter_maxpool") return multi_filter_problem(rng);
  if (layer == "primary_capsules") return primary_problem(rng);
  if (layer == "squash") return squash_problem(rng);
  if (layer == "softmax") return softmax_problem(rng);
  if (layer == "static_routing") return model_problem(rng, Routing::kStatic, false);
  if (layer == "dynamic_routing") return model_problem(rng, Routing::kDynamic, false);
  if (layer == "margin_loss") return margin_problem(rng);
  if (layer == "decoder") {
    // Alternate between the bare decoder stack and the full model with it.
    return instance % 2 == 0 ? decoder_only_problem(rng)
                             : model_problem(rng, Routing::kStatic, true);
  }
  if (layer == "l2_penalty") return l2_problem(rng);
  throw ConfigError("unknown gradient-check layer '" + layer + "'");
}

}  // namespace

const std::vector<std::string>& gradient_suite_layers() {
  static const std::vector<std::string> layers{
      "gate",           "conv_plain",      "multi_filter_maxpool", "primary_capsules",
      "squash",         "softmax",         "static_routing",       "dynamic_routing",
      "margin_loss",    "decoder",         "l2_penalty"};
  return layers;
}

GradSuiteRow check_layer_gradients(const std::string& layer, std::size_t instances, double eps,
                                   std::uint64_t base_seed) {
  GradSuiteRow row;
  row.layer = layer;
  for (std::size_t i = 0; i < instances; ++i) {
    Rng rng(base_seed + i);
    Problem p = make_problem(layer, rng, i);
    const GradCheckResult r = grad_check(p.loss, std::move(p.params), eps);
    ++row.instances;
    if (row.worst_param.empty() || r.max_rel_error > row.max_rel_error) {
      row.max_rel_error = r.max_rel_error;
      row.worst_param = r.worst_param + "[" + std::to_string(r.worst_index) + "] seed " +
                        std::to_string(base_seed + i);
      row.worst_analytic = r.analytic;
      row.worst_numeric = r.numeric;
    }
  }
  return row;
}

std::vector<GradSuiteRow> run_gradient_suite(std::size_t instances, double eps,
                                             std::uint64_t base_seed) {
  std::vector<GradSuiteRow> rows;
  for (const auto& layer : gradient_suite_layers())
    rows.push_back(check_layer_gradients(layer, instances, eps, base_seed));
  return rows;
}

}  // namespace capstext

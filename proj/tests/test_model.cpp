#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "capstext/errors.hpp"
#include "capstext/kernels.hpp"
#include "capstext/model.hpp"
#include "test_util.hpp"

using namespace capstext;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::pick;
using testutil::randn;

namespace {

using Vec = std::vector<double>;

Vec squash_ref(const Vec& s) {
  double n2 = 0;
  for (double x : s) n2 += x * x;
  Vec out(s.size(), 0.0);
  if (n2 == 0) return out;
  const double f = n2 / (1 + n2) / std::sqrt(n2);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] * f;
  return out;
}

// u[i][j] is the prediction of lower capsule i for class j.
struct RouteRef {
  std::vector<Vec> v;                // [k][N]
  std::vector<std::vector<Vec>> cs;  // coupling per iteration, [it][i][j]
};

RouteRef route_ref(const std::vector<std::vector<Vec>>& u, int iters, bool pin_coupling) {
  const std::size_t a = u.size(), k = u[0].size(), n = u[0][0].size();
  std::vector<Vec> b(a, Vec(k, 0.0));
  RouteRef out;
  for (int it = 0; it < iters; ++it) {
    std::vector<Vec> c(a, Vec(k, 1.0));
    if (!pin_coupling) {
      for (std::size_t i = 0; i < a; ++i) {
        double z = 0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(b[i][j]);
        for (std::size_t j = 0; j < k; ++j) c[i][j] = std::exp(b[i][j]) / z;
      }
    }
    out.cs.push_back(c);
    out.v.assign(k, Vec(n, 0.0));
    for (std::size_t j = 0; j < k; ++j) {
      Vec s(n, 0.0);
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t d = 0; d < n; ++d) s[d] += c[i][j] * u[i][j][d];
      out.v[j] = squash_ref(s);
    }
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t d = 0; d < n; ++d) b[i][j] += out.v[j][d] * u[i][j][d];
  }
  return out;
}

std::vector<std::vector<Vec>> unpack(const Tensor<double>& u) {
  std::vector<std::vector<Vec>> out(u.dim(0), std::vector<Vec>(u.dim(1), Vec(u.dim(2))));
  for (std::size_t i = 0; i < u.dim(0); ++i)
    for (std::size_t j = 0; j < u.dim(1); ++j)
      for (std::size_t d = 0; d < u.dim(2); ++d) out[i][j][d] = u(i, j, d);
  return out;
}

double diff(const ClassCapsules<double>& v, const std::vector<Vec>& ref) {
  double m = 0;
  for (std::size_t j = 0; j < ref.size(); ++j)
    for (std::size_t d = 0; d < ref[j].size(); ++d) m = std::max(m, std::abs(v.v(j, d) - ref[j][d]));
  return m;
}

Tensor<double> conv_ref(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b) {
  const std::size_t l = x.dim(0), e = x.dim(1), f = k.dim(0), n = k.dim(2);
  Tensor<double> out({l - f + 1, n});
  for (std::size_t t = 0; t + f <= l; ++t)
    for (std::size_t o = 0; o < n; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < e; ++j) s += x(t + i, j) * k(i, j, o);
      out(t, o) = s;
    }
  return out;
}

ClassCapsules<double> caps_with_norms(const Vec& norms) {
  Tensor<double> v({norms.size(), 2});
  for (std::size_t j = 0; j < norms.size(); ++j) v(j, 0) = norms[j];
  return {v};
}

ModelConfig small_config(Routing routing, Frontend frontend = Frontend::kEluGate) {
  ModelConfig c;
  c.num_classes = 3;
  c.vocab_size = 12;
  c.max_len = 7;
  c.embed_dim = 5;
  c.frontend = frontend;
  c.filters = 4;
  c.filter_size = 3;
  c.multi_filter_sizes = {2, 3};
  c.multi_filter_count = 3;
  c.capsules = 4;
  c.capsule_dim = 3;
  c.class_capsule_dim = 4;
  c.routing = routing;
  c.init_std = 0.5;
  return c;
}

}  // namespace

TEST(EmbedLookup, RowsPadAndRange) {
  std::mt19937_64 rng(1);
  auto table = randn({5, 3}, rng);
  const std::int32_t ids[] = {3, 0, 4};
  auto d = embed_lookup<double>(ids, table);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(d(0, j), table(3, j));
    EXPECT_EQ(d(1, j), 0.0);
    EXPECT_EQ(d(2, j), table(4, j));
  }
  const std::int32_t bad[] = {5};
  EXPECT_THROW(embed_lookup<double>(bad, table), LookupError);
  const std::int32_t neg[] = {-1};
  EXPECT_THROW(embed_lookup<double>(neg, table), LookupError);
}

TEST(EluGate, ZeroGateSilencesOutput) {
  std::mt19937_64 rng(2);
  GateConvParams<double> p{randn({3, 4, 2}, rng), Tensor<double>({3, 4, 2}), randn({2}, rng),
                           Tensor<double>({2})};
  EXPECT_EQ(elu_gate_forward(randn({6, 4}, rng), p), Tensor<double>({4, 2}));
}

TEST(EluGate, ProductOfPaths) {
  // Single position: W path 2.0, V path 1.0.
  GateConvParams<double> p{Tensor<double>({1, 1, 1}, 2.0), Tensor<double>({1, 1, 1}, 1.0),
                           Tensor<double>({1}), Tensor<double>({1})};
  auto y = elu_gate_forward(Tensor<double>({1, 1}, 1.0), p);
  EXPECT_EQ(y[0], 2.0);
}

TEST(EluGate, MatchesCompositionalOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t f = pick(rng, 1, 4), l = f + pick(rng, 0, 6), e = pick(rng, 1, 6),
                      n = pick(rng, 1, 5);
    GateConvParams<double> p{randn({f, e, n}, rng), randn({f, e, n}, rng), randn({n}, rng),
                             randn({n}, rng)};
    auto x = randn({l, e}, rng);
    auto lin = conv_ref(x, p.w, p.b), gate = conv_ref(x, p.v, p.c);
    Tensor<double> ref(lin.shape());
    for (std::size_t i = 0; i < ref.size(); ++i)
      ref[i] = lin[i] * (gate[i] > 0 ? gate[i] : std::exp(gate[i]) - 1.0);
    ASSERT_LT(max_abs_diff(elu_gate_forward(x, p), ref), 1e-6);
  }
}

TEST(EluGate, ShapeMismatch) {
  GateConvParams<double> p{Tensor<double>({3, 4, 2}), Tensor<double>({3, 4, 3}),
                           Tensor<double>({2}), Tensor<double>({2})};
  EXPECT_THROW(elu_gate_forward(Tensor<double>({5, 4}), p), ShapeError);
}

TEST(Frontend, VariantsFromModel) {
  std::mt19937_64 rng(4);
  auto x = randn({7, 5}, rng);
  CapsNet<double> gate(small_config(Routing::kStatic), 1);
  auto fp = gate.frontend_params();
  EXPECT_TRUE(bitwise_equal(frontend_forward(x, fp), elu_gate_forward(x, fp.gate)));

  CapsNet<double> plain(small_config(Routing::kStatic, Frontend::kConvPlain), 1);
  auto pp = plain.frontend_params();
  EXPECT_LT(max_abs_diff(frontend_forward(x, pp),
                         kernels::elu(conv_ref(x, pp.plain.kernel, pp.plain.bias))),
            1e-12);

  CapsNet<double> multi(small_config(Routing::kStatic, Frontend::kMultiFilter), 1);
  auto y = frontend_forward(x, multi.frontend_params());
  EXPECT_EQ(y.dim(1), 6u);
  EXPECT_EQ(y.dim(0), 5u);  // rows of the widest filter
  CapsNet<double> pooled(small_config(Routing::kStatic, Frontend::kMultiFilterMaxpool), 1);
  auto yp = frontend_forward(x, pooled.frontend_params());
  EXPECT_EQ(yp.dim(0), 2u);
  EXPECT_EQ(yp.dim(1), 6u);
}

TEST(Frontend, MultiFilterChannelCount) {
  ModelConfig c;
  c.frontend = Frontend::kMultiFilter;
  c.max_len = 10;
  c.embed_dim = 8;
  EXPECT_EQ(feature_channels(c), 300u);
  FrontendParams<double> p;
  p.variant = Frontend::kMultiFilter;
  for (std::size_t f : {3, 4, 5}) p.multi.push_back({Tensor<double>({f, 2, 100}), Tensor<double>({100})});
  EXPECT_EQ(frontend_forward(Tensor<double>({9, 2}), p).dim(1), 300u);
  p.multi.clear();
  EXPECT_THROW(frontend_forward(Tensor<double>({9, 2}), p), ConfigError);
}

TEST(PrimaryCapsules, NormsBelowOneAndZeroCase) {
  std::mt19937_64 rng(5);
  PrimaryCapsuleParams<double> p{randn({4, 1, 3, 12}, rng, 3.0), randn({12}, rng), 4, 3};
  auto h = primary_capsules_forward(randn({4, 3}, rng, 3.0), p);
  ASSERT_EQ(h.shape(), (Shape{4, 3}));
  auto norms = kernels::norm_last(h);
  for (double n : norms.data()) EXPECT_LT(n, 1.0);
  PrimaryCapsuleParams<double> z{randn({4, 1, 3, 12}, rng), Tensor<double>({12}), 4, 3};
  EXPECT_EQ(primary_capsules_forward(Tensor<double>({4, 3}), z), Tensor<double>({4, 3}));
  EXPECT_THROW(primary_capsules_forward(Tensor<double>({5, 3}), z), ShapeError);
}

TEST(PrimaryCapsules, TwentyNewsPresetShape) {
  ModelConfig c = preset_config("20news");
  EXPECT_EQ(c.capsules, 6u);
  EXPECT_EQ(c.capsule_dim, 10u);
  EXPECT_EQ(c.class_capsule_dim, 16u);
}

TEST(DynamicRoute, SingleClassExample) {
  Tensor<double> u({2, 1, 2});
  u(0, 0, 0) = u(1, 0, 0) = 1.0;
  auto [v, st] = dynamic_route(u, 1);
  EXPECT_EQ(st.c_coef, Tensor<double>({2, 1}, 1.0));
  EXPECT_NEAR(v.v(0, 0), 0.8, 1e-7);
  EXPECT_EQ(v.v(0, 1), 0.0);
  EXPECT_NEAR(st.b_logits(0, 0), 0.8, 1e-7);
  EXPECT_NEAR(st.b_logits(1, 0), 0.8, 1e-7);
}

TEST(DynamicRoute, FirstPassIsUniform) {
  std::mt19937_64 rng(6);
  auto [v, st] = dynamic_route(randn({3, 2, 4}, rng), 1);
  for (double c : st.c_coef.data()) EXPECT_EQ(c, 0.5);
  EXPECT_THROW(dynamic_route(randn({3, 2, 4}, rng), 0), ConfigError);
}

TEST(DynamicRoute, MatchesLoopReference) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto u = randn({4, 3, 5}, rng);
    const int r = 3;
    auto ref = route_ref(unpack(u), r, false);
    std::size_t seen = 0;
    auto [v, st] = dynamic_route<double>(u, r, [&](const RoutingState<double>& s) {
      const auto& c = ref.cs[seen];
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s.c_coef(i, j), c[i][j], 1e-6);
      ++seen;
    });
    EXPECT_EQ(seen, 3u);
    EXPECT_LT(diff(v, ref.v), 1e-6);
  }
}

TEST(DynamicRoute, OneIterationIsMeanPrediction) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t a = pick(rng, 1, 6), k = pick(rng, 1, 5), n = pick(rng, 1, 6);
    auto u = randn({a, k, n}, rng);
    std::vector<Vec> ref(k);
    for (std::size_t j = 0; j < k; ++j) {
      Vec s(n, 0.0);
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t d = 0; d < n; ++d) s[d] += u(i, j, d) / static_cast<double>(k);
      ref[j] = squash_ref(s);
    }
    EXPECT_LT(diff(dynamic_route(u, 1).first, ref), 1e-6);
  }
}

TEST(DynamicRoute, CouplingRowsSumToOne) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto u = randn({pick(rng, 1, 8), pick(rng, 1, 6), 4}, rng, 2.0);
    dynamic_route<double>(u, 5, [](const RoutingState<double>& s) {
      for (std::size_t i = 0; i < s.c_coef.dim(0); ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < s.c_coef.dim(1); ++j) sum += s.c_coef(i, j);
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    });
  }
}

TEST(StaticRoute, Examples) {
  Tensor<double> w({2, 1, 2, 2});
  for (std::size_t i = 0; i < 2; ++i) w[i * 4] = w[i * 4 + 3] = 1.0;
  auto h = Tensor<double>::from_rows({{1, 0}, {1, 0}});
  auto v = static_route(h, w);
  EXPECT_NEAR(v.v(0, 0), 0.8, 1e-7);
  EXPECT_EQ(v.v(0, 1), 0.0);
  EXPECT_EQ(static_route(Tensor<double>({2, 2}), w).v, Tensor<double>({1, 2}));
}

TEST(StaticRoute, EqualsPinnedCouplingReference) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t a = pick(rng, 1, 6), k = pick(rng, 1, 5), m = pick(rng, 1, 5),
                      n = pick(rng, 1, 5);
    auto h = randn({a, m}, rng), w = randn({a, k, m, n}, rng);
    std::vector<std::vector<Vec>> u(a, std::vector<Vec>(k, Vec(n, 0.0)));
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t r = 0; r < m; ++r) u[i][j][c] += w[((i * k + j) * m + r) * n + c] * h(i, r);
    ASSERT_LT(diff(static_route(h, w), route_ref(u, 1, true).v), 1e-6);
  }
}

TEST(Classify, ExamplesAndScaleInvariance) {
  EXPECT_EQ(classify(caps_with_norms({0.1, 0.9})), 1u);
  EXPECT_EQ(classify(caps_with_norms({0.0, 0.0, 0.0})), 0u);
  EXPECT_EQ(classify(caps_with_norms({0.5, 0.5, 0.6})), 2u);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0), s(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vec norms(pick(rng, 1, 8));
    for (auto& x : norms) x = u(rng);
    Vec scaled = norms;
    const double c = s(rng);
    for (auto& x : scaled) x *= c;
    EXPECT_EQ(classify(caps_with_norms(norms)), classify(caps_with_norms(scaled)));
  }
}

TEST(MarginLoss, Examples) {
  EXPECT_NEAR(margin_loss(caps_with_norms({0.9, 0.1, 0.1}), 0), 0.0, 1e-15);
  EXPECT_NEAR(margin_loss(caps_with_norms({0.0, 0.0, 0.0}), 0), 0.81, 1e-12);
  EXPECT_NEAR(margin_loss(caps_with_norms({0.5, 0.5}), 0), 0.24, 1e-12);
  EXPECT_THROW(margin_loss(caps_with_norms({0.5, 0.5}), 2), LookupError);
}

TEST(Reconstruct, ZeroMaskGivesComposedBiases) {
  std::mt19937_64 rng(12);
  const std::size_t k = 2, n = 3, h1 = 4, h2 = 5, l = 2, e = 3;
  DecoderParams<double> d{randn({k * n, h1}, rng), randn({h1}, rng), randn({h1, h2}, rng),
                          randn({h2}, rng),        randn({h2, l * e}, rng), randn({l * e}, rng)};
  ClassCapsules<double> v{Tensor<double>({k, n})};
  auto out = reconstruct_forward(v, 1, d, l, e);
  ASSERT_EQ(out.shape(), (Shape{l, e}));
  auto elu = [](double x) { return x > 0 ? x : std::exp(x) - 1; };
  Vec a1(h1), a2(h2);
  for (std::size_t i = 0; i < h1; ++i) a1[i] = elu(d.b1[i]);
  for (std::size_t j = 0; j < h2; ++j) {
    double s = d.b2[j];
    for (std::size_t i = 0; i < h1; ++i) s += a1[i] * d.w2(i, j);
    a2[j] = elu(s);
  }
  for (std::size_t o = 0; o < l * e; ++o) {
    double s = d.b3[o];
    for (std::size_t j = 0; j < h2; ++j) s += a2[j] * d.w3(j, o);
    EXPECT_NEAR(out[o], s, 1e-12);
  }
  EXPECT_THROW(reconstruct_forward(v, 1, d, 3, e), ShapeError);
  EXPECT_THROW(reconstruct_forward(v, 2, d, l, e), LookupError);
}

TEST(Reconstruct, MaskIgnoresOtherClasses) {
  std::mt19937_64 rng(13);
  DecoderParams<double> d{randn({6, 4}, rng), randn({4}, rng), randn({4, 4}, rng),
                          randn({4}, rng),    randn({4, 6}, rng), randn({6}, rng)};
  ClassCapsules<double> v{randn({2, 3}, rng)};
  auto w = v;
  for (std::size_t c = 0; c < 3; ++c) w.v(0, c) += 1.0;
  EXPECT_TRUE(bitwise_equal(reconstruct_forward(v, 1, d, 2, 3), reconstruct_forward(w, 1, d, 2, 3)));
}

TEST(CapsuleDimPerturb, Examples) {
  std::mt19937_64 rng(14);
  ClassCapsules<double> v{randn({6, 16}, rng)};
  EXPECT_TRUE(bitwise_equal(capsule_dim_perturb(v, 2, 5, 0.0).v, v.v));
  auto p = capsule_dim_perturb(v, 3, 1, 0.3);
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t d = 0; d < 16; ++d) {
      if (j == 3 && d == 1) {
        EXPECT_NEAR(p.v(j, d), v.v(j, d) + 0.3, 1e-15);
      } else {
        EXPECT_EQ(p.v(j, d), v.v(j, d));
      }
    }
  auto back = capsule_dim_perturb(p, 3, 1, -0.3);
  EXPECT_NEAR(back.v(3, 1), v.v(3, 1), 1e-15);
  EXPECT_THROW(capsule_dim_perturb(v, 6, 0, 0.1), LookupError);
  EXPECT_THROW(capsule_dim_perturb(v, 0, 16, 0.1), LookupError);
  EXPECT_THROW(capsule_dim_perturb(v, 0, 0, 0.31), ConfigError);
}

TEST(CapsNet, ParameterCountParityAcrossRouting) {
  for (const Preset& p : presets()) {
    ModelConfig c = p.config;
    c.vocab_size = 50;
    c.embed_dim = 8;
    c.max_len = std::max<std::size_t>(p.stats.avg_len, c.filter_size);
    c.routing = Routing::kStatic;
    const auto s = trainable_parameter_count(c);
    c.routing = Routing::kDynamic;
    EXPECT_EQ(s, trainable_parameter_count(c)) << p.name;
    const auto specs = parameter_specs(c);
    const auto route = std::find_if(specs.begin(), specs.end(),
                                    [](const ParamSpec& x) { return x.name == "route.W"; });
    ASSERT_NE(route, specs.end());
    EXPECT_EQ(route->shape, (Shape{c.capsules, c.num_classes, c.capsule_dim, c.class_capsule_dim}));
  }
}

TEST(CapsNet, InitialisationRules) {
  CapsNet<double> net(small_config(Routing::kDynamic), 3);
  const auto& emb = net.parameter("embedding");
  for (std::size_t j = 0; j < emb.dim(1); ++j) EXPECT_EQ(emb(0, j), 0.0);
  for (std::size_t i = emb.dim(1); i < emb.size(); ++i) EXPECT_LE(std::abs(emb[i]), 0.25);
  for (const auto& p : net.parameters())
    if (p.is_bias) EXPECT_EQ(p.value, Tensor<double>(p.value.shape())) << p.name;
  EXPECT_THROW(net.parameter("nope"), LookupError);
  EXPECT_EQ(net.group_lambdas().at("embedding"), 0.0);
}

TEST(CapsNet, BatchForwardMatchesSingleDocumentPipeline) {
  for (Routing routing : {Routing::kStatic, Routing::kDynamic}) {
    for (Frontend fe : {Frontend::kEluGate, Frontend::kConvPlain, Frontend::kMultiFilterMaxpool}) {
      ModelConfig c = small_config(routing, fe);
      CapsNet<double> net(c, 5);
      std::mt19937_64 rng(15);
      std::vector<std::int32_t> ids(3 * c.max_len);
      for (auto& id : ids) id = static_cast<std::int32_t>(pick(rng, 0, c.vocab_size - 1));
      const auto batch = net.class_capsules(ids);
      const auto fp = net.frontend_params();
      const auto pp = net.primary_params();
      for (std::size_t b = 0; b < 3; ++b) {
        std::span<const std::int32_t> doc(ids.data() + b * c.max_len, c.max_len);
        auto h = primary_capsules_forward(
            frontend_forward(embed_lookup(doc, net.parameter("embedding")), fp), pp);
        ClassCapsules<double> v =
            routing == Routing::kStatic
                ? static_route(h, net.parameter("route.W"))
                : dynamic_route(predict_upper(h, net.parameter("route.W")), c.route_iters).first;
        for (std::size_t i = 0; i < v.v.size(); ++i)
          EXPECT_NEAR(batch[b * v.v.size() + i], v.v[i], 1e-12);
      }
    }
  }
}

TEST(CapsNet, ForwardIsBitwiseDeterministic) {
  for (Routing routing : {Routing::kStatic, Routing::kDynamic}) {
    ModelConfig c = small_config(routing);
    c.decoder = true;
    c.decoder_hidden1 = 6;
    c.decoder_hidden2 = 7;
    CapsNet<double> net(c, 8);
    std::vector<std::int32_t> ids(2 * c.max_len, 3);
    ids[1] = 0;
    const int labels[] = {0, 2};
    Tape<double> t1, t2;
    auto r1 = net.forward(t1, ids, labels, {});
    auto r2 = net.forward(t2, ids, labels, {});
    EXPECT_TRUE(bitwise_equal(r1.class_caps.value(), r2.class_caps.value()));
    EXPECT_TRUE(bitwise_equal(r1.loss->value(), r2.loss->value()));
    EXPECT_TRUE(bitwise_equal(t1.backward(*r1.loss)[1], t2.backward(*r2.loss)[1]));
  }
}

TEST(CapsNet, LossDecomposes) {
  ModelConfig c = small_config(Routing::kStatic);
  c.decoder = true;
  c.decoder_hidden1 = 6;
  c.decoder_hidden2 = 7;
  CapsNet<double> net(c, 9);
  std::vector<std::int32_t> ids(c.max_len, 4);
  const int labels[] = {1};
  Tape<double> tape;
  auto r = net.forward(tape, ids, labels, {});
  const double total = r.loss->value()[0];
  EXPECT_NEAR(total,
              r.margin->value()[0] + 0.03 * r.recon_mse->value()[0] + r.l2->value()[0], 1e-12);

  ClassCapsules<double> v{r.class_caps.value().reshaped({c.num_classes, c.class_capsule_dim})};
  EXPECT_NEAR(r.margin->value()[0], margin_loss(v, 1), 1e-12);
  auto rec = reconstruct_forward(v, 1, net.decoder_params(), c.max_len, c.embed_dim);
  auto emb = embed_lookup<double>(ids, net.parameter("embedding"));
  double mse = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) mse += (rec[i] - emb[i]) * (rec[i] - emb[i]);
  EXPECT_NEAR(r.recon_mse->value()[0], mse / static_cast<double>(rec.size()), 1e-12);
}

TEST(CapsNet, ForwardShapeErrors) {
  ModelConfig c = small_config(Routing::kStatic);
  CapsNet<double> net(c, 1);
  std::vector<std::int32_t> ids(c.max_len + 1, 2);
  Tape<double> tape;
  const int labels[] = {0};
  EXPECT_THROW(net.forward(tape, ids, labels, {}), ShapeError);
  ids.resize(c.max_len);
  ForwardOptions<double> train;
  train.training = true;
  EXPECT_THROW(net.forward(tape, ids, labels, train), ContractError);
  ForwardOptions<double> bound;
  bound.bound_params.push_back(tape.constant(Tensor<double>({1})));
  EXPECT_THROW(net.forward(tape, ids, labels, bound), ContractError);
  EXPECT_THROW(CapsNet<double>(c, ParameterList<double>{}), ShapeError);
}

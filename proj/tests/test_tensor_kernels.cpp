#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "capstext/kernels.hpp"
#include "capstext/parallel.hpp"
#include "test_util.hpp"

using namespace capstext;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::pick;
using testutil::randn;

namespace {

// Brute-force valid convolution.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k,
                           const Tensor<double>& b) {
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

}  // namespace

TEST(Tensor, RejectsZeroDimsAndBadLengths) {
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3});
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
  t.reshape({3, 2});
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
}

TEST(Tensor, FiniteCheck) {
  Tensor<double> t({3}, 1.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.require_finite("t"), NumericalError);
}

TEST(Conv1d, HandSum) {
  auto x = Tensor<double>::from_rows({{1}, {2}, {3}, {4}});
  Tensor<double> k({2, 1, 1}, 1.0), b({1}, 0.0);
  auto y = kernels::conv1d_valid(x, k, b);
  EXPECT_EQ(y, Tensor<double>::from_rows({{3}, {5}, {7}}));
}

TEST(Conv1d, ZeroKernelGivesZeros) {
  std::mt19937_64 rng(1);
  auto x = randn({6, 4}, rng);
  auto y = kernels::conv1d_valid(x, Tensor<double>({3, 4, 5}), Tensor<double>({5}));
  EXPECT_EQ(y, Tensor<double>({4, 5}));
}

TEST(Conv1d, MatchesNaiveOracle) {
  std::mt19937_64 rng(2);
  auto x = randn({7, 5}, rng), k = randn({3, 5, 2}, rng), b = randn({2}, rng);
  EXPECT_LT(max_abs_diff(kernels::conv1d_valid(x, k, b), conv_oracle(x, k, b)), 1e-6);
}

TEST(Conv1d, OracleSweepOverShapes) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t f = pick(rng, 1, 5), l = f + pick(rng, 0, 8), e = pick(rng, 1, 7),
                      n = pick(rng, 1, 6);
    auto x = randn({l, e}, rng), k = randn({f, e, n}, rng), b = randn({n}, rng);
    ASSERT_LT(max_abs_diff(kernels::conv1d_valid(x, k, b), conv_oracle(x, k, b)), 1e-6)
        << "l=" << l << " e=" << e << " f=" << f << " n=" << n;
  }
}

TEST(Conv1d, BatchEqualsPerDocument) {
  std::mt19937_64 rng(4);
  auto xb = randn({3, 6, 4}, rng), k = randn({2, 4, 3}, rng), b = randn({3}, rng);
  auto yb = kernels::conv1d_valid(xb, k, b);
  for (std::size_t d = 0; d < 3; ++d) {
    Tensor<double> x({6, 4}, std::vector<double>(xb.ptr() + d * 24, xb.ptr() + (d + 1) * 24));
    auto y = kernels::conv1d_valid(x, k, b);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(yb[d * y.size() + i], y[i]);
  }
}

TEST(Conv1d, ShortInputNamesLengths) {
  try {
    kernels::conv1d_valid(Tensor<double>({2, 3}), Tensor<double>({4, 3, 1}), Tensor<double>({1}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('4'), std::string::npos);
  }
}

TEST(Conv1d, InputsUnmodifiedAndRepeatable) {
  std::mt19937_64 rng(5);
  auto x = randn({9, 3}, rng), k = randn({4, 3, 2}, rng), b = randn({2}, rng);
  const auto x0 = x, k0 = k, b0 = b;
  auto y1 = kernels::conv1d_valid(x, k, b);
  auto y2 = kernels::conv1d_valid(x, k, b);
  EXPECT_TRUE(bitwise_equal(y1, y2));
  EXPECT_TRUE(bitwise_equal(x, x0));
  EXPECT_TRUE(bitwise_equal(k, k0));
  EXPECT_TRUE(bitwise_equal(b, b0));
}

TEST(Softmax, Examples) {
  auto y = kernels::softmax_rows(Tensor<double>::from_rows({{0, 0, 0}}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  y = kernels::softmax_rows(Tensor<double>::from_rows({{std::log(2.0), 0}}));
  EXPECT_NEAR(y[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0 / 3.0, 1e-15);
  y = kernels::softmax_rows(Tensor<double>::from_rows({{1000, 0}}));
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t a = pick(rng, 1, 6), k = pick(rng, 1, 8);
    auto x = randn({a, k}, rng, 3.0);
    auto y = kernels::softmax_rows(x);
    auto xs = x;
    for (std::size_t i = 0; i < a; ++i) {
      const double c = shift(rng);
      for (std::size_t j = 0; j < k; ++j) xs(i, j) += c;
    }
    auto ys = kernels::softmax_rows(xs);
    for (std::size_t i = 0; i < a; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < k; ++j) {
        EXPECT_GE(y(i, j), 0.0);
        s += y(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    EXPECT_LT(max_abs_diff(y, ys), 1e-6);
  }
}

TEST(Elu, Examples) {
  auto y = kernels::elu(Tensor<double>({3}, std::vector<double>{0, 1, -1}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
  EXPECT_NEAR(y[2], std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(y[2], -0.6321, 1e-4);
}

TEST(Elu, DerivativeAtZeroIsOne) {
  Tensor<double> x({1}, 0.0), g({1}, 1.0), gx({1});
  kernels::elu_backward(x, g, gx);
  EXPECT_EQ(gx[0], 1.0);
}

TEST(Squash, Examples) {
  auto y = kernels::squash(Tensor<double>::from_rows({{0.6, 0.8}, {3, 0}, {0, 0}}));
  EXPECT_NEAR(std::hypot(y(0, 0), y(0, 1)), 0.5, 1e-7);
  EXPECT_NEAR(y(0, 0) / y(0, 1), 0.75, 1e-12);
  EXPECT_NEAR(y(1, 0), 0.9, 1e-7);
  EXPECT_EQ(y(1, 1), 0.0);
  EXPECT_EQ(y(2, 0), 0.0);
  EXPECT_EQ(y(2, 1), 0.0);
}

TEST(MaxPool, HandMax) {
  auto y = kernels::maxpool_rows(Tensor<double>::from_rows({{1}, {3}, {2}, {0}}), 2);
  EXPECT_EQ(y, Tensor<double>::from_rows({{3}, {2}}));
}

TEST(PredictUpper, IdentityWeightsCopyInput) {
  std::mt19937_64 rng(7);
  const std::size_t a = 3, k = 4, m = 5;
  auto h = randn({a, m}, rng);
  Tensor<double> w({a, k, m, m});
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t d = 0; d < m; ++d) w[((i * k + j) * m + d) * m + d] = 1.0;
  auto u = kernels::predict_upper(h, w);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t d = 0; d < m; ++d) EXPECT_EQ(u(i, j, d), h(i, d));
}

TEST(PredictUpper, MatchesPerPairMatVec) {
  std::mt19937_64 rng(8);
  const std::size_t a = 4, k = 3, m = 6, n = 5;
  auto h = randn({a, m}, rng), w = randn({a, k, m, n}, rng);
  auto u = kernels::predict_upper(h, w);
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0;
        for (std::size_t r = 0; r < m; ++r) s += w[((i * k + j) * m + r) * n + c] * h(i, r);
        EXPECT_NEAR(u(i, j, c), s, 1e-12);
      }
  EXPECT_EQ(kernels::predict_upper(Tensor<double>({a, m}), w), Tensor<double>({a, k, n}));
}

TEST(Linear, MatchesLoop) {
  std::mt19937_64 rng(9);
  auto x = randn({3, 4}, rng), w = randn({4, 2}, rng), b = randn({2}, rng);
  auto y = kernels::linear(x, w, b);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = b[c];
      for (std::size_t i = 0; i < 4; ++i) s += x(r, i) * w(i, c);
      EXPECT_NEAR(y(r, c), s, 1e-12);
    }
}

TEST(Parallel, ChunksCoverRangeOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) ++hits[i];
  }, 7);
  for (int h : hits) EXPECT_EQ(h, 1);
}

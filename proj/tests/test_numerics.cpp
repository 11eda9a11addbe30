#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "aqmix/numerics.hpp"

using namespace aqmix;

TEST(AffineTest, HandComputedForwardAndBackward) {
  const DenseMatrix W(2, 2, {1, 2, 3, 4});
  const std::vector<double> x{1, 1}, b{0, -4};
  EXPECT_EQ(affine(x, W, b), (std::vector<double>{3, 3}));
  const std::vector<double> dy{1, 1};
  const AffineGrads g = affine_backward(x, W, dy);
  EXPECT_EQ(g.dx, (std::vector<double>{4, 6}));
  EXPECT_EQ(g.db, dy);
  EXPECT_EQ(g.dW, DenseMatrix(2, 2, {1, 1, 1, 1}));
  const std::vector<double> x3{1, 2, 3};
  EXPECT_THROW(affine(x3, W, b), ShapeError);
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(ActivationTest, EluValues) {
  EXPECT_EQ(elu(0.0), 0.0);
  EXPECT_EQ(elu(2.5), 2.5);
  EXPECT_NEAR(elu(-1.0), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(elu(-50.0), -1.0, 1e-15);
  EXPECT_EQ(elu_grad(1.0), 1.0);
  EXPECT_NEAR(elu_grad(-1.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
  EXPECT_EQ(relu(-3.0), 0.0);
}

namespace {

struct GruFixture {
  ParameterStore p;
  GruIds g;
  GruFixture(std::size_t in, std::size_t h) { g = add_gru(p, "gru", in, h); }
};

std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST(GruTest, ZeroParametersHalveTheState) {
  GruFixture f(3, 4);
  const std::vector<double> x{1, -2, 3}, h{0.4, -0.8, 1.0, 0.0};
  const auto out = gru_forward(f.p, f.g, x, h);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(out[k], 0.5 * h[k]);
}

TEST(GruTest, SaturatedUpdateGateKeepsState) {
  GruFixture f(2, 3);
  double* bx = f.p.value(f.g.bx);
  for (std::size_t k = 0; k < 3; ++k) bx[3 + k] = 60.0;
  Rng rng(1);
  xavier_init(1, 1, rng);
  const std::vector<double> x{5, -5}, h{0.1, 0.2, -0.3};
  const auto out = gru_forward(f.p, f.g, x, h);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out[k], h[k], 1e-12);
}

TEST(GruTest, BackwardMatchesFiniteDifferences) {
  const std::size_t I = 4, H = 5;
  GruFixture f(I, H);
  Rng rng(3);
  for (double& v : f.p.values()) v = 0.5 * rng.normal();
  const auto x = random_vec(I, rng), h = random_vec(H, rng, 0.5), w = random_vec(H, rng);
  auto loss = [&](const std::vector<double>& xx, const std::vector<double>& hh) {
    const auto out = gru_forward(f.p, f.g, xx, hh);
    double s = 0;
    for (std::size_t k = 0; k < H; ++k) s += w[k] * out[k];
    return s;
  };
  GruCache cache;
  gru_forward(f.p, f.g, x, h, &cache);
  f.p.zero_grad();
  std::vector<double> dx(I, 0.0), dh(H, 0.0);
  gru_backward(f.p, f.g, cache, w, dx, dh);

  const double step = 1e-6;
  double worst = 0;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4}); };
  for (std::size_t k = 0; k < f.p.size(); ++k) {
    const double saved = f.p.values()[k];
    f.p.values()[k] = saved + step;
    const double up = loss(x, h);
    f.p.values()[k] = saved - step;
    const double down = loss(x, h);
    f.p.values()[k] = saved;
    worst = std::max(worst, rel(f.p.grads()[k], (up - down) / (2 * step)));
  }
  for (std::size_t k = 0; k < I; ++k) {
    auto a = x, b = x;
    a[k] += step;
    b[k] -= step;
    worst = std::max(worst, rel(dx[k], (loss(a, h) - loss(b, h)) / (2 * step)));
  }
  for (std::size_t k = 0; k < H; ++k) {
    auto a = h, b = h;
    a[k] += step;
    b[k] -= step;
    worst = std::max(worst, rel(dh[k], (loss(x, a) - loss(x, b)) / (2 * step)));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(GruTest, BatchedForwardEqualsSingleCalls) {
  GruFixture f(3, 4);
  Rng rng(8);
  for (double& v : f.p.values()) v = rng.normal();
  Batch xs, hs;
  for (int b = 0; b < 5; ++b) {
    xs.push_back(random_vec(3, rng));
    hs.push_back(random_vec(4, rng));
  }
  const Batch out = gru_forward_batch(f.p, f.g, xs, hs);
  for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(out[b], gru_forward(f.p, f.g, xs[b], hs[b]));
}

TEST(AdamTest, ZeroGradientLeavesParametersInPlace) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  AdamState s(2);
  for (int k = 0; k < 10; ++k) adam_step(p, g, s);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.step, 10u);
}

TEST(AdamTest, FirstStepMovesByLearningRateAgainstTheSign) {
  std::vector<double> p{0.0, 0.0, 0.0}, g{3.0, -0.01, 250.0};
  AdamState s(3);
  adam_step(p, g, s, {1e-3});
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1e-3, 1e-9);
  EXPECT_NEAR(p[2], -1e-3, 1e-9);
}

TEST(AdamTest, DeterministicOverManySteps) {
  auto run = [] {
    Rng rng(4);
    std::vector<double> p(20, 0.0), g(20);
    AdamState s(20);
    for (int k = 0; k < 100; ++k) {
      for (double& x : g) x = rng.normal();
      adam_step(p, g, s);
    }
    return std::make_pair(p, s);
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamTest, NonFiniteGradientFaultsWithoutTouchingState) {
  std::vector<double> p{1.0, 1.0}, g{0.5, NAN};
  AdamState s(2);
  EXPECT_THROW(adam_step(p, g, s), TrainingFault);
  EXPECT_EQ(p, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(s.step, 0u);
  std::vector<double> wrong(3);
  EXPECT_THROW(adam_step(p, wrong, s), ShapeError);
}

TEST(ClipTest, ScalesToMaximumNorm) {
  std::vector<double> g{30.0, 40.0};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 50.0);
  EXPECT_DOUBLE_EQ(g[0], 6.0);
  EXPECT_DOUBLE_EQ(g[1], 8.0);
  std::vector<double> small{3.0, 4.0};
  clip_global_norm(small, 10.0);
  EXPECT_EQ(small, (std::vector<double>{3.0, 4.0}));
}

TEST(XavierTest, BoundAndSpread) {
  Rng rng(2);
  const DenseMatrix m = xavier_init(128, 128, rng);
  const double bound = std::sqrt(6.0 / 256.0);
  EXPECT_NEAR(bound, 0.1531, 1e-4);
  double lo = 0, hi = 0, sum = 0;
  for (double v : m.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  EXPECT_GE(lo, -bound);
  EXPECT_LE(hi, bound);
  EXPECT_LT(lo, -0.95 * bound);
  EXPECT_GT(hi, 0.95 * bound);
  EXPECT_NEAR(sum / 16384.0, 0.0, 0.01);
}

TEST(XavierTest, StoreZeroesBiases) {
  ParameterStore p;
  p.add("w", 4, 3, false);
  p.add("b", 4, 1, true);
  for (double& v : p.values()) v = 9.0;
  Rng rng(1);
  xavier_init_store(p, rng);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.value(1)[k], 0.0);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_LE(std::abs(p.value(0)[k]), std::sqrt(6.0 / 7.0));
}

TEST(ParameterStoreTest, LayoutAndErrors) {
  ParameterStore p;
  EXPECT_EQ(p.add("a", 2, 3, false), 0u);
  EXPECT_EQ(p.add("b", 3, 1, true), 1u);
  EXPECT_EQ(p.size(), 9u);
  EXPECT_EQ(p.segment(1).offset, 6u);
  EXPECT_EQ(p.find("b"), 1u);
  EXPECT_THROW(p.find("c"), ShapeError);
  EXPECT_THROW(p.add("a", 1, 1, false), ShapeError);
  ParameterStore q;
  q.add("a", 3, 2, false);
  EXPECT_FALSE(p.same_layout(q));
  EXPECT_THROW(p.copy_values_from(q), ShapeError);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(RngTest, StateRoundTrip) {
  Rng a(5);
  for (int k = 0; k < 17; ++k) a.normal();
  Rng b;
  b.set_state(a.state());
  for (int k = 0; k < 50; ++k) EXPECT_EQ(a.uniform(), b.uniform());
  EXPECT_THROW(b.set_state("garbage"), ConfigError);
}

TEST(RngTest, IndexIsUniformEnough) {
  Rng rng(6);
  std::vector<int> counts(6, 0);
  for (int k = 0; k < 60000; ++k) ++counts[rng.index(6)];
  for (int c : counts) EXPECT_NEAR(c / 60000.0, 1.0 / 6.0, 0.01);
}

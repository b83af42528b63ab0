#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fairscl/numkit.hpp"

using namespace fairscl;

namespace {

long double ref_logsumexp(const std::vector<long double>& xs) {
  long double s = 0.0L;
  for (long double x : xs) s += std::exp(x);
  return std::log(s);
}

}  // namespace

TEST(Logsumexp, MatchesHighPrecisionReference) {
  const std::vector<double> xs = {1.0, 2.0, 3.0};
  EXPECT_NEAR(logsumexp(xs), static_cast<double>(ref_logsumexp({1.0L, 2.0L, 3.0L})), 1e-14);
  EXPECT_NEAR(logsumexp(xs), 3.4076059644, 1e-10);
}

TEST(Logsumexp, ZerosGiveLogTwo) {
  const std::vector<double> xs = {0.0, 0.0};
  EXPECT_NEAR(logsumexp(xs), std::log(2.0), 1e-15);
}

TEST(Logsumexp, LargeInputsDoNotOverflow) {
  const std::vector<double> xs = {1000.0, 1000.0};
  EXPECT_NEAR(logsumexp(xs), 1000.0 + std::log(2.0), 1e-12);
  Vector v(2);
  v << -1000.0, -1000.0;
  EXPECT_NEAR(logsumexp(v), -1000.0 + std::log(2.0), 1e-12);
}

TEST(Logsumexp, EmptyInputThrows) {
  EXPECT_THROW(logsumexp(std::vector<double>{}), DimensionError);
}

TEST(L2Normalize, ThreeFourFive) {
  Vector v(2);
  v << 3.0, 4.0;
  const Vector z = l2_normalize(v);
  EXPECT_DOUBLE_EQ(z[0], 0.6);
  EXPECT_DOUBLE_EQ(z[1], 0.8);
}

TEST(L2Normalize, NearZeroNormThrows) {
  EXPECT_THROW(l2_normalize(Vector::Zero(3)), DegenerateInputError);
  EXPECT_THROW(rank1_nullspace_projector(Vector::Zero(3)), DegenerateInputError);
}

TEST(Projector, AxisCase) {
  Vector w(2);
  w << 1.0, 0.0;
  const Matrix p = rank1_nullspace_projector(w);
  Matrix expected(2, 2);
  expected << 0.0, 0.0, 0.0, 1.0;
  EXPECT_LT((p - expected).norm(), 1e-15);
  EXPECT_EQ(projector_rank(p), 1);
}

TEST(Projector, IdempotentSymmetricAndKillsDirection) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int t = 0; t < 50; ++t) {
    Vector w(7);
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = normal(rng);
    const Matrix p = rank1_nullspace_projector(w);
    EXPECT_LT((p * p - p).norm(), 1e-12);
    EXPECT_LT((p - p.transpose()).norm(), 1e-15);
    EXPECT_LT((p * w).norm(), 1e-12 * w.norm());
    EXPECT_EQ(projector_rank(p), 6);
  }
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  AdamState s = AdamState::zeros(3, 1e-3);
  Vector params = Vector::Zero(3);
  Vector g(3);
  g << 0.5, -2.0, 1e-3;
  const AdamResult r = adam_step(s, params, g);
  for (int i = 0; i < 3; ++i) {
    const double expected = -1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(r.params[i], expected, 1e-15);
  }
  EXPECT_EQ(r.state.step, 1);
  EXPECT_EQ(s.step, 0);  // pure: input state untouched
}

TEST(Adam, FiveStepsMatchReference) {
  const std::vector<std::vector<long double>> grads = {
      {0.3L, -1.0L}, {0.1L, -0.5L}, {-0.2L, 0.4L}, {0.05L, 2.0L}, {1.0L, -0.1L}};
  long double p[2] = {0.5L, -0.25L}, m[2] = {0, 0}, v[2] = {0, 0};
  const long double lr = 0.01L, b1 = 0.9L, b2 = 0.999L, eps = 1e-8L;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    for (int i = 0; i < 2; ++i) {
      const long double g = grads[t][i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const long double mhat = m[i] / (1 - std::pow(b1, static_cast<long double>(t + 1)));
      const long double vhat = v[i] / (1 - std::pow(b2, static_cast<long double>(t + 1)));
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  AdamState s = AdamState::zeros(2, 0.01);
  Vector params(2);
  params << 0.5, -0.25;
  for (const auto& g : grads) {
    Vector gv(2);
    gv << static_cast<double>(g[0]), static_cast<double>(g[1]);
    adam_update(s, params, gv);
  }
  EXPECT_NEAR(params[0], static_cast<double>(p[0]), 1e-14);
  EXPECT_NEAR(params[1], static_cast<double>(p[1]), 1e-14);
  EXPECT_EQ(s.step, 5);
}

TEST(Adam, RejectsMismatchAndNonFinite) {
  AdamState s = AdamState::zeros(2, 1e-3);
  Vector params = Vector::Zero(2);
  EXPECT_THROW(adam_step(s, params, Vector::Zero(3)), DimensionError);
  Vector bad(2);
  bad << 1.0, std::nan("");
  EXPECT_THROW(adam_step(s, params, bad), DegenerateInputError);
}

TEST(Shapes, RequireSameShape) {
  EXPECT_NO_THROW(require_same_shape(Matrix::Zero(2, 3), Matrix::Ones(2, 3), "x"));
  EXPECT_THROW(require_same_shape(Matrix::Zero(2, 3), Matrix::Zero(3, 2), "x"), DimensionError);
  Matrix m = Matrix::Zero(2, 2);
  EXPECT_TRUE(all_finite(m));
  m(1, 1) = INFINITY;
  EXPECT_FALSE(all_finite(m));
}

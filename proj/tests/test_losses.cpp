#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"

using namespace gncl;

namespace {

Vector onehot(std::size_t c, std::size_t C) {
  Vector y(C, 0.0);
  y[c] = 1.0;
  return y;
}

}  // namespace

TEST(LossKindTest, ValidatesOutputDim) {
  EXPECT_NO_THROW(LossKind::mse().validate());
  EXPECT_THROW((LossKind{LossTag::MSE, 2}).validate(), ContractViolation);
  EXPECT_THROW((LossKind{LossTag::CrossEntropySoftmax, 1}).validate(), ContractViolation);
  EXPECT_THROW((LossKind{LossTag::NLL, 3, 0.0}).validate(), ContractViolation);
  EXPECT_THROW((LossKind{LossTag::Exponential, 2}).validate(), ContractViolation);
}

TEST(LossKindTest, NamesRoundTrip) {
  for (auto tag : {LossTag::MSE, LossTag::NLL, LossTag::CrossEntropySoftmax, LossTag::Exponential,
                   LossTag::GaussianHinge})
    EXPECT_EQ(parse_loss_tag(loss_name(tag)), tag);
  EXPECT_EQ(loss_name(LossTag::CrossEntropySoftmax), "crossentropy");
  EXPECT_THROW(parse_loss_tag("hinge"), ConfigError);
}

TEST(LossValueTest, SpecExamples) {
  EXPECT_DOUBLE_EQ(loss_value(LossKind::mse(), Vector{2.0}, Vector{1.0}), 0.5);
  EXPECT_NEAR(loss_value(LossKind::cross_entropy(3), Vector{0, 0, 0}, onehot(0, 3)), std::log(3.0), 1e-15);
  EXPECT_NEAR(loss_value(LossKind::exponential(), Vector{1.0}, Vector{1.0}), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(loss_value(LossKind::gaussian_hinge(), Vector{0.0}, Vector{1.0}), 1.0 / std::sqrt(std::numbers::pi),
              1e-15);
}

TEST(LossValueTest, RejectsBadInputs) {
  EXPECT_THROW(loss_value(LossKind::mse(), Vector{1.0, 2.0}, Vector{1.0}), ContractViolation);
  EXPECT_THROW(loss_value(LossKind::cross_entropy(3), Vector{0, 0, 0}, Vector{0.5, 0.5, 0}), ContractViolation);
  EXPECT_THROW(loss_value(LossKind::exponential(), Vector{0.0}, Vector{0.5}), ContractViolation);
}

TEST(LossValueTest, NllClampIsCounted) {
  LossDiagnostics diag;
  const auto kind = LossKind::nll(2);
  const double v = loss_value(kind, Vector{-0.5, 0.5}, onehot(0, 2), &diag);
  EXPECT_NEAR(v, -std::log(1e-12), 1e-9);
  EXPECT_EQ(diag.nll_clamps, 1u);
  EXPECT_TRUE(std::isfinite(v));
}

TEST(LossGradientTest, SpecExamples) {
  EXPECT_DOUBLE_EQ(loss_gradient(LossKind::mse(), Vector{2.0}, Vector{1.0})[0], 1.0);
  const Vector g = loss_gradient(LossKind::cross_entropy(3), Vector{0, 0, 0}, onehot(0, 3));
  EXPECT_NEAR(g[0], -2.0 / 3.0, 1e-15);
  EXPECT_NEAR(g[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(g[2], 1.0 / 3.0, 1e-15);
}

TEST(LossGradientTest, GaussianHingeMatchesFiniteDifference) {
  const auto kind = LossKind::gaussian_hinge();
  const Vector y{1.0};
  const Vector fd = oracle::fd_gradient([&](const Vector& z) { return loss_value(kind, z, y); }, Vector{0.5});
  EXPECT_LT(oracle::rel_err(loss_gradient(kind, Vector{0.5}, y)[0], fd[0]), 1e-7);
}

TEST(LossGradientTest, AllKindsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (const auto& kind : oracle::all_kinds()) {
    for (int t = 0; t < 200; ++t) {
      const Vector z = oracle::random_output(kind, rng);
      const Vector y = oracle::random_label(kind, rng);
      const Vector g = loss_gradient(kind, z, y);
      const Vector fd = oracle::fd_gradient([&](const Vector& p) { return loss_value(kind, p, y); }, z);
      for (std::size_t i = 0; i < g.size(); ++i)
        EXPECT_LT(std::abs(g[i] - fd[i]) / std::max(std::abs(fd[i]), 1e-8), 1e-6)
            << loss_name(kind.tag) << " t=" << t << " i=" << i;
    }
  }
}

TEST(LossHessianTest, SpecExamples) {
  EXPECT_EQ(loss_hessian(LossKind::mse(), Vector{3.7}, Vector{-1.0}), Matrix::identity(1));
  const Matrix H = loss_hessian(LossKind::cross_entropy(3), Vector{0, 0, 0}, onehot(2, 3));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(H(i, j), i == j ? 2.0 / 9.0 : -1.0 / 9.0, 1e-15);
  const Matrix N = loss_hessian(LossKind::nll(2), Vector{0.5, 0.5}, onehot(0, 2));
  EXPECT_DOUBLE_EQ(N(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(N(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(N(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(N(1, 1), 0.0);
}

TEST(LossHessianTest, AllKindsMatchFiniteDifferencesAndAreSymmetric) {
  std::mt19937_64 rng(12);
  for (const auto& kind : oracle::all_kinds()) {
    for (int t = 0; t < 200; ++t) {
      const Vector z = oracle::random_output(kind, rng);
      const Vector y = oracle::random_label(kind, rng);
      const Matrix H = loss_hessian(kind, z, y);
      EXPECT_LE(asymmetry(H), 1e-12);
      const auto jac = oracle::fd_jacobian([&](const Vector& p) { return loss_gradient(kind, p, y); }, z);
      for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = 0; j < z.size(); ++j)
          EXPECT_LT(std::abs(H(i, j) - jac[i][j]) / std::max(std::abs(jac[i][j]), 1e-6), 1e-5)
              << loss_name(kind.tag) << " t=" << t;
    }
  }
}

TEST(LossHessianTest, CrossEntropyRowsSumToZeroAndArePsd) {
  std::mt19937_64 rng(13);
  const auto kind = LossKind::cross_entropy(5);
  for (int t = 0; t < 200; ++t) {
    const Vector z = oracle::random_output(kind, rng, -4.0, 4.0);
    const Matrix H = loss_hessian(kind, z, oracle::random_label(kind, rng));
    Eigen::MatrixXd E(5, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        row += H(i, j);
        E(i, j) = H(i, j);
      }
      EXPECT_NEAR(row, 0.0, 1e-10);
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(E);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    // Singular along the all-ones direction: positive semidefinite, not definite.
    EXPECT_NEAR(eig.eigenvalues().cwiseAbs().minCoeff(), 0.0, 1e-12);
  }
}

TEST(SoftmaxTest, SpecExamples) {
  const Vector u = softmax(Vector{0, 0, 0});
  for (double v : u) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Vector s = softmax(Vector{1000, 0, 0});
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  const Vector p = softmax(Vector{1, 2, 3});
  EXPECT_NEAR(p[1] / p[0], std::exp(1.0), 1e-12);
  EXPECT_NEAR(p[2] / p[0], std::exp(2.0), 1e-12);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
}

TEST(SoftmaxTest, RejectsNonFinite) {
  EXPECT_THROW(softmax(Vector{0.0, std::nan("")}), ContractViolation);
  EXPECT_THROW(softmax(Vector{0.0, INFINITY}), ContractViolation);
}

TEST(ThirdDerivativeTest, MatchesFiniteDifferencesOfHessian) {
  std::mt19937_64 rng(14);
  for (const auto& kind : oracle::all_kinds()) {
    for (int t = 0; t < 30; ++t) {
      const Vector z = oracle::random_output(kind, rng, -1.5, 1.5);
      const Vector y = oracle::random_label(kind, rng);
      const std::size_t C = z.size();
      for (std::size_t k = 0; k < C; ++k) {
        Vector up = z, down = z;
        up[k] += 1e-5;
        down[k] -= 1e-5;
        const Matrix Hu = loss_hessian(kind, up, y), Hd = loss_hessian(kind, down, y);
        for (std::size_t i = 0; i < C; ++i)
          for (std::size_t j = 0; j < C; ++j) {
            const double fd = (Hu(i, j) - Hd(i, j)) / 2e-5;
            EXPECT_LT(std::abs(loss_third_derivative(kind, z, y, i, j, k) - fd) / std::max(std::abs(fd), 1e-4),
                      1e-4)
                << loss_name(kind.tag);
          }
      }
    }
  }
}

TEST(ThirdDerivativeBoundTest, MseIsZeroAndExponentialIsE) {
  EXPECT_EQ(third_derivative_bound(LossKind::mse()).m.value(), 0.0);
  EXPECT_NEAR(third_derivative_bound(LossKind::exponential(), PredictionDomain::symmetric(1.0)).m.value(),
              std::exp(1.0), 1e-15);
  EXPECT_TRUE(third_derivative_bound(LossKind::nll(3)).m.is_infinite());
}

TEST(ThirdDerivativeBoundTest, NllClampGivesFiniteButFlaggedBound) {
  const auto spec = third_derivative_bound(LossKind::nll(3), PredictionDomain::clamped());
  ASSERT_TRUE(spec.m.is_finite());
  EXPECT_NEAR(spec.m.value(), 2.0 / std::pow(1e-12, 3), 1e24);
  EXPECT_FALSE(spec.meaningful);
}

TEST(ThirdDerivativeBoundTest, ExponentialSampledNeverExceedsE) {
  const auto kind = LossKind::exponential();
  for (int s = 0; s <= 10000; ++s) {
    const double h = -1.0 + 2.0 * s / 10000.0;
    for (double y : {-1.0, 1.0})
      EXPECT_LE(std::abs(loss_third_derivative(kind, Vector{h}, Vector{y}, 0, 0, 0)), std::exp(1.0) + 1e-15);
  }
}

TEST(ThirdDerivativeBoundTest, GaussianHingeGridMaximum) {
  const auto kind = LossKind::gaussian_hinge();
  double best = 0.0, arg = 0.0;
  for (int s = 0; s <= 200000; ++s) {
    const double h = -1.0 + 2.0 * s / 200000.0;
    const double v = std::abs(loss_third_derivative(kind, Vector{h}, Vector{1.0}, 0, 0, 0));
    if (v > best) best = v, arg = h;
  }
  const double m = third_derivative_bound(kind, PredictionDomain::symmetric(1.0)).m.value();
  EXPECT_NEAR(best, 0.9679, 1e-4);
  EXPECT_NEAR(std::abs(arg), 1.0 / std::sqrt(2.0), 1e-4);
  EXPECT_NEAR(m, best, 1e-8);
  EXPECT_GE(m, best);
}

TEST(ThirdDerivativeBoundTest, CrossEntropyMatchesBruteForceAndClosedForm) {
  const auto grid = oracle::ce_third_simplex_max(1e-3);
  EXPECT_NEAR(grid.value, 0.0962, 0.002);
  // i = j = k attains the maximum; i = j != k ties with it by symmetry.
  EXPECT_NEAR(oracle::ce_third_simplex_max_pattern(1e-3, 0, 0, 0), grid.value, 1e-12);
  EXPECT_NEAR(oracle::ce_third_simplex_max_pattern(1e-3, 0, 0, 1), grid.value, 1e-12);
  const double m = third_derivative_bound(LossKind::cross_entropy(3)).m.value();
  EXPECT_NEAR(m, std::sqrt(3.0) / 18.0, 1e-15);
  EXPECT_GE(m, grid.value);
}

TEST(ThirdDerivativeBoundTest, PublishedCrossEntropyBoundIsExceeded) {
  // q = ((3 - sqrt 3)/6, rest), pattern i = j = k.
  const double qi = (3.0 - std::sqrt(3.0)) / 6.0;
  const Vector q{qi, (1.0 - qi) / 2.0, (1.0 - qi) / 2.0};
  EXPECT_GT(std::abs(oracle::ce_third(q, 0, 0, 0)), kPublishedCrossEntropyThirdDerivativeBound);
  // The pairwise-unequal pattern alone peaks at 2/27, also above the published value.
  EXPECT_NEAR(oracle::ce_third_simplex_max_pattern(1e-3, 0, 1, 2), 2.0 / 27.0, 1e-6);
  EXPECT_GT(2.0 / 27.0, kPublishedCrossEntropyThirdDerivativeBound);
}

TEST(ThirdDerivativeBoundTest, CrossEntropyEntriesOnSimplexStayBelowM) {
  const double m = third_derivative_bound(LossKind::cross_entropy(4)).m.value();
  std::mt19937_64 rng(15);
  const auto kind = LossKind::cross_entropy(4);
  for (int t = 0; t < 2000; ++t) {
    const Vector z = oracle::random_output(kind, rng, -6.0, 6.0);
    const Vector y = oracle::random_label(kind, rng);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 4; ++k)
          EXPECT_LE(std::abs(loss_third_derivative(kind, z, y, i, j, k)), m + 1e-15);
  }
}

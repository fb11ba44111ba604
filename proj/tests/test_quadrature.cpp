#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "nelson/quadrature.hpp"

using namespace nelson;

TEST(Kronrod, ExactForLowDegreePolynomials) {
  auto p = [](double x) { return 3.0 * std::pow(x, 9) - x * x + 2.0; };
  const auto panel = detail::kronrod21(p, -1.0, 2.0);
  const double exact = 0.3 * (1024.0 - 1.0) - (8.0 + 1.0) / 3.0 + 6.0;
  EXPECT_NEAR(panel.value, exact, 1e-12 * std::abs(exact));
  EXPECT_LT(panel.error, 1e-11);
}

TEST(Kronrod, GaussAndKronrodDisagreeOnRoughIntegrand) {
  auto f = [](double x) { return std::sqrt(x); };
  const auto panel = detail::kronrod21(f, 0.0, 1.0);
  EXPECT_GT(panel.error, 1e-6);
  EXPECT_NEAR(panel.value, 2.0 / 3.0, 10.0 * panel.error);
}

TEST(Adaptive, SineOverHalfPeriod) {
  const Estimate e = integrate_adaptive([](double x) { return std::sin(x); }, 0.0, std::numbers::pi, 1e-13, 1e-15, 100);
  EXPECT_NEAR(e.value, 2.0, 1e-13);
  EXPECT_LE(e.abs_error, 2e-13);
}

TEST(Adaptive, ErrorEstimateBoundsTrueError) {
  auto f = [](double x) { return 1.0 / std::sqrt(x); };
  const Estimate e = integrate_adaptive(f, 1e-12, 1.0, 1e-10, 1e-12, 2000);
  const double exact = 2.0 - 2.0 * std::sqrt(1e-12);
  EXPECT_LE(std::abs(e.value - exact), std::max(e.abs_error, 1e-10 * exact));
  EXPECT_LE(e.abs_error, 1e-10 * exact * 1.0001);
}

TEST(Adaptive, OscillatoryAgainstClosedForm) {
  // int_0^50 cos(20 x) exp(-x) dx = (1 + e^{-50}(20 sin 1000 - cos 1000)) / 401
  auto f = [](double x) { return std::cos(20.0 * x) * std::exp(-x); };
  const Estimate e = integrate_adaptive(f, 0.0, 50.0, 1e-12, 1e-14, 4000);
  const double exact = (1.0 + std::exp(-50.0) * (20.0 * std::sin(1000.0) - std::cos(1000.0))) / 401.0;
  EXPECT_NEAR(e.value, exact, 1e-13);
}

TEST(Adaptive, EmptyIntervalIsZero) {
  const Estimate e = integrate_adaptive([](double) { return 1.0; }, 3.0, 3.0, 1e-10, 1e-10, 10);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_EQ(e.abs_error, 0.0);
}

TEST(Adaptive, BudgetExhaustionCarriesAchievedError) {
  auto f = [](double x) { return std::sin(1.0 / x); };
  try {
    integrate_adaptive(f, 1e-4, 1.0, 1e-14, 1e-16, 3);
    FAIL() << "expected QuadratureError";
  } catch (const QuadratureError& e) {
    EXPECT_GT(e.achieved_error(), 0.0);
  }
}

TEST(Adaptive, NonFiniteIntervalRejected) {
  EXPECT_THROW(integrate_adaptive([](double) { return 1.0; }, 0.0, INFINITY, 1e-8, 1e-8, 10), std::domain_error);
}

TEST(CompensatedSum, RecoversCancellation) {
  CompensatedSum s;
  s.add(1e16);
  s.add(1.0);
  s.add(-1e16);
  EXPECT_EQ(s.value(), 1.0);
}

TEST(CompositeGaussLegendre, ExactThroughDegreeNineteen) {
  const FixedRule rule = composite_gauss_legendre(0.5, 3.0, 3);
  ASSERT_EQ(rule.nodes.size(), 30u);
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) s += rule.weights[i] * std::pow(rule.nodes[i], 19);
  const double exact = (std::pow(3.0, 20) - std::pow(0.5, 20)) / 20.0;
  EXPECT_NEAR(s / exact, 1.0, 1e-13);
}

TEST(TailRadius, CertifiedBoundDominatesTrueTail) {
  for (const double eps : {0.02, 0.1, 1.0}) {
    for (const double rate : {0.0, 1.5}) {
      for (const double power : {-1.0, 0.0, 1.0, 2.0}) {
        const double budget = 1e-12;
        const double r = tail_radius(eps, rate, power, 1.0, 1.0, budget);
        auto h = [&](double x) { return std::pow(x, power) * std::exp(-eps * x * x - rate * x); };
        const double tail = integrate_adaptive(h, r, r + 40.0 / std::sqrt(eps), 1e-10, 1e-30, 4000).value;
        EXPECT_LE(tail, tail_bound(eps, rate, power, 1.0, r) * (1.0 + 1e-9));
        EXPECT_LE(tail_bound(eps, rate, power, 1.0, r), budget * (1.0 + 1e-9));
      }
    }
  }
}

TEST(TailRadius, ReturnsLowerWhenAlreadySmall) {
  EXPECT_EQ(tail_radius(1.0, 0.0, 0.0, 1.0, 30.0, 1e-12), 30.0);
}

TEST(QuadratureConfig, RejectsBadTolerances) {
  QuadratureConfig q;
  q.rel_tol = 0.0;
  EXPECT_THROW(q.validate(), std::invalid_argument);
  q = {};
  q.max_subdivisions = 0;
  EXPECT_THROW(q.validate(), std::invalid_argument);
  q = {};
  q.tail_cut = -1.0;
  EXPECT_THROW(q.validate(), std::invalid_argument);
}

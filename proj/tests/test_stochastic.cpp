#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "hba/distributions.hpp"
#include "hba/rng.hpp"
#include "hba/truncnorm.hpp"

using namespace hba;

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double tn_cdf(double x, double loc, double sigma) {
  const double lo = std_normal_cdf(-loc / sigma);
  return (std_normal_cdf((x - loc) / sigma) - lo) / (1.0 - lo);
}

}  // namespace

TEST(TnMean, Examples) {
  EXPECT_NEAR(tn_mean(0.0, 1.0), std::sqrt(2.0 / std::numbers::pi), 1e-14);
  EXPECT_NEAR(tn_mean(100.0, 1.0), 100.0, 1e-10);
  // Deep tail: the mean approaches sigma^2 / |mu|.
  EXPECT_NEAR(tn_mean(-1e4, 1.0), 1e-4, 1e-11);
}

TEST(TnMean, MonteCarlo) {
  Rng rng(1);
  const int n = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = tn_sample(rng, 0.5, 0.25);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - tn_mean(0.5, 0.25)), 3 * se);
}

TEST(BiasCorrectH, Examples) {
  EXPECT_NEAR(bias_correct_h(std::sqrt(2.0 / std::numbers::pi), 1.0), 0.0, 1e-9);
  EXPECT_NEAR(bias_correct_h(100.0, 1.0), 100.0, 1e-8);
  const double eps = 1e-6;
  for (double a : {1e-3, 1e-8, 1e-30, 1e-200}) {
    const double h = bias_correct_h(a, 1.0);
    EXPECT_LT(h, -0.5 / a);
    EXPECT_EQ(std::max(h, eps), eps);
  }
  EXPECT_EQ(bias_correct_h(1e-310, 1.0), -std::numeric_limits<double>::infinity());
  EXPECT_THROW(bias_correct_h(0.0, 1.0), InvalidArgument);
}

TEST(BiasCorrectH, InvertsMeanOnGrid) {
  for (int i = 0; i < 50; ++i) {
    const double a = std::pow(10.0, -3.0 + 6.0 * i / 49.0);
    for (int j = 0; j < 50; ++j) {
      const double s2 = std::pow(10.0, -3.0 + 5.0 * j / 49.0);
      EXPECT_NEAR(tn_mean(bias_correct_h(a, s2), s2), a, 1e-8) << "a=" << a << " s2=" << s2;
    }
  }
}

TEST(BiasCorrectH, StrictlyIncreasing) {
  for (double s2 : {1e-2, 1.0, 50.0}) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 400; ++i) {
      const double a = std::pow(10.0, -3.0 + 6.0 * i / 399.0);
      const double h = bias_correct_h(a, s2);
      EXPECT_GT(h, prev);
      prev = h;
    }
  }
}

TEST(TnLogpdf, Examples) {
  EXPECT_NEAR(tn_logpdf(0.0, 0.0, 1.0), std::log(2.0) - 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  EXPECT_EQ(tn_logpdf(-0.1, 0.0, 1.0), -std::numeric_limits<double>::infinity());
  EXPECT_TRUE(std::isfinite(tn_logpdf(1.0, -200.0, 1.0)));
}

TEST(TnLogpdf, IntegratesToOne) {
  using boost::math::quadrature::gauss_kronrod;
  for (double loc : {-5.0, -1.0, 0.0, 0.7, 3.0}) {
    for (double s2 : {0.01, 0.5, 1.0, 4.0}) {
      const double sigma = std::sqrt(s2);
      const double hi = std::max(loc, 0.0) + 10.0 * sigma;
      auto f = [&](double x) { return std::exp(tn_logpdf(x, loc, s2)); };
      const double total = gauss_kronrod<double, 61>::integrate(f, 0.0, hi, 15, 1e-12);
      EXPECT_NEAR(total, 1.0, 1e-6) << "loc=" << loc << " s2=" << s2;
    }
  }
}

TEST(TnSample, MeanSupportAndKs) {
  Rng rng(7);
  const int n = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = tn_sample(rng, -2.0, 1.0);
    ASSERT_GE(x, 0.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - tn_mean(-2.0, 1.0)), 4 * se);

  std::vector<double> xs(20000);
  for (auto& x : xs) x = tn_sample(rng, -2.0, 1.0);
  std::sort(xs.begin(), xs.end());
  double dmax = 0;
  const double m = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = tn_cdf(xs[i], -2.0, 1.0);
    dmax = std::max({dmax, f - i / m, (i + 1) / m - f});
  }
  EXPECT_LT(dmax, 1.949 / std::sqrt(m));  // 0.1% level
}

TEST(TnSample, Reproducible) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(tn_sample(a, 0.3, 2.0), tn_sample(b, 0.3, 2.0));
}

TEST(PoissonLoglik, Examples) {
  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(5);
  EXPECT_NEAR(poisson_loglik(y0, Eigen::VectorXd::Ones(5)), -5.0, 1e-14);
  Eigen::VectorXd y(1), l(1);
  y << 2;
  l << 2;
  EXPECT_NEAR(poisson_loglik(y, l), 2 * std::log(2.0) - 2 - std::log(2.0), 1e-14);
  y << -1;
  EXPECT_THROW(poisson_loglik(y, l), InvalidArgument);
  y << 3;
  l << 0;
  EXPECT_EQ(poisson_loglik(y, l), kNegInf);
  y << 0;
  EXPECT_NEAR(poisson_loglik(y, l), -1e-12, 1e-20);
}

TEST(PoissonLoglik, GradientMatchesFiniteDifference) {
  Eigen::VectorXd y(4), l(4);
  y << 0, 3, 7, 12;
  l << 0.5, 2.5, 9.0, 11.0;
  for (int i = 0; i < 4; ++i) {
    const double h = 1e-6 * l(i);
    Eigen::VectorXd up = l, dn = l;
    up(i) += h;
    dn(i) -= h;
    const double fd = (poisson_loglik(y, up) - poisson_loglik(y, dn)) / (2 * h);
    const double exact = y(i) / l(i) - 1.0;
    EXPECT_NEAR(fd, exact, 1e-6 * std::max(1.0, std::abs(exact)));
  }
}

TEST(PriorLogpdf, Examples) {
  Hyperparams h;
  ModelParams p;
  p.m = 16;
  EXPECT_EQ(prior_logpdf(p, h), kNegInf);
  p.m = 5;
  p.q = 29;
  EXPECT_EQ(prior_logpdf(p, h), kNegInf);
  EXPECT_EQ(h.a1, 2.02);
  EXPECT_EQ(h.b1, 0.102);
  EXPECT_EQ(h.a2, 0.001);
  EXPECT_EQ(h.b2, 0.001);
  const double mode = h.b1 / (h.a1 + 1.0);
  const double direct = std::pow(h.b1, h.a1) / std::tgamma(h.a1) * std::pow(mode, -h.a1 - 1) * std::exp(-h.b1 / mode);
  EXPECT_NEAR(inv_gamma_logpdf(mode, h.a1, h.b1), std::log(direct), 1e-12);
  p.q = 40;
  p.theta1 = mode;
  p.sigma2_eta = 0.5;
  const double expect = -std::log(15.0) - std::log(31.0) + std::log(direct) + inv_gamma_logpdf(0.5, h.a2, h.b2);
  EXPECT_NEAR(prior_logpdf(p, h), expect, 1e-12);
  h.knn_grid = {6, 9};
  p.k_nn = 7;
  EXPECT_EQ(prior_logpdf(p, h), kNegInf);
  p.k_nn = 9;
  EXPECT_NEAR(prior_logpdf(p, h), expect - std::log(2.0), 1e-12);
}

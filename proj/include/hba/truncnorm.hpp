#pragma once

// Normal distribution left-truncated at zero, TN_[0, inf)(loc, sigma2), and
// the bias correction h() that picks the location whose truncated mean hits
// a requested value.

#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include "hba/error.hpp"
#include "hba/rng.hpp"

namespace hba {

inline double std_normal_logpdf(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

namespace detail {

// Below this standardized value the continued fraction replaces erfc.
inline constexpr double kMillsSwitch = -10.0;

// K(x) = 1 / (x + 2 / (x + 3 / (x + ...))) for x > 0. The inverse Mills
// ratio is phi(-x)/Phi(-x) = x + K(x), so K(x) is the unit-variance
// truncated mean at location -x without the cancellation of -x + (x + K).
inline double mills_tail(double x) {
  double t = x;
  for (int n = 120; n >= 2; --n) t = x + n / t;
  return 1.0 / t;
}

}  // namespace detail

// log Phi(z), accurate far into the lower tail.
inline double log_ndtr(double z) {
  if (z >= detail::kMillsSwitch) return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
  const double x = -z;
  // Phi(-x) = phi(x) / (x + K(x))
  return std_normal_logpdf(x) - std::log(x + detail::mills_tail(x));
}

// Mean of a standard normal left-truncated at -z, i.e. z + phi(z)/Phi(z)
// for the unit-variance TN with location z.
inline double std_tn_mean(double z) {
  if (z >= detail::kMillsSwitch) return z + std::exp(std_normal_logpdf(z) - log_ndtr(z));
  return detail::mills_tail(-z);
}

// Mean of TN_[0, inf)(mu, sigma2).
inline double tn_mean(double mu, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("tn_mean: sigma2 must be positive");
  const double sigma = std::sqrt(sigma2);
  return sigma * std_tn_mean(mu / sigma);
}

// Location mu* with tn_mean(mu*, sigma2) == target. Returns -infinity when
// the root is not representable (target / sigma below ~1e-300); callers clamp
// with max{h, eps}.
inline double bias_correct_h(double target, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("bias_correct_h: sigma2 must be positive");
  if (!(target > 0.0) || !std::isfinite(target)) {
    throw InvalidArgument("bias_correct_h: target must be positive and finite");
  }
  const double sigma = std::sqrt(sigma2);
  const double r = target / sigma;
  if (r < 1e-300) return -std::numeric_limits<double>::infinity();
  if (r > 8.0) {
    // phi(z)/Phi(z) < 1e-14 here; a few fixed-point passes converge.
    double z = r;
    for (int i = 0; i < 4; ++i) z = r - (std_tn_mean(z) - z);
    return sigma * z;
  }
  // g(z) = std_tn_mean(z) is increasing with z < g(z) < z + phi/Phi and
  // g(z) < -1/z for z < 0, so [-1/r - 1, r] brackets the root.
  auto f = [r](double z) { return std_tn_mean(z) - r; };
  double lo = -1.0 / r - 1.0;
  double hi = r;
  std::uintmax_t max_iter = 200;
  auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(52), max_iter);
  return sigma * 0.5 * (a + b);
}

// log density of TN_[0, inf)(loc, sigma2) at x; -inf outside the support.
inline double tn_logpdf(double x, double loc, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("tn_logpdf: sigma2 must be positive");
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  const double sigma = std::sqrt(sigma2);
  return std_normal_logpdf((x - loc) / sigma) - std::log(sigma) - log_ndtr(loc / sigma);
}

// Exact draw from TN_[0, inf)(loc, sigma2): plain normal rejection when the
// acceptance probability Phi(loc/sigma) is at least one half, otherwise
// Robert's exponential proposal on the standardized tail.
inline double tn_sample(Rng& rng, double loc, double sigma2) {
  if (!(sigma2 > 0.0)) throw InvalidArgument("tn_sample: sigma2 must be positive");
  const double sigma = std::sqrt(sigma2);
  const double a = -loc / sigma;  // standardized lower bound
  if (a <= 0.0) {
    while (true) {
      const double z = rng.normal();
      if (z >= a) return loc + sigma * z;
    }
  }
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  while (true) {
    const double z = a + rng.exponential(rate);
    const double u = rng.uniform();
    if (std::log(u) <= -0.5 * (z - rate) * (z - rate)) return std::max(0.0, loc + sigma * z);
  }
}

}  // namespace hba

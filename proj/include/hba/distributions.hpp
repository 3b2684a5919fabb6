#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hba/error.hpp"
#include "hba/fields.hpp"

namespace hba {

// Current values of the sampled parameters {m, q, theta1, sigma2_eta}
// (plus the neighbor count in Laplacian-eigenmap mode).
struct ModelParams {
  int m = 5;
  int q = 30;
  double theta1 = 0.05;
  double sigma2_eta = 1.0;
  int k_nn = 0;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Hyperparams {
  double eps = 1e-6;
  int q_min = 30;
  int q_max = 60;
  int m_min = 1;
  int m_max = 15;
  double a1 = 2.02;
  double b1 = 0.102;
  double a2 = 0.001;
  double b2 = 0.001;
  std::vector<int> knn_grid;  // empty outside Laplacian-eigenmap mode

  void validate() const {
    if (!(eps > 0.0)) throw InvalidArgument("hyperparameters: eps must be positive");
    if (q_min < 1 || q_min > q_max) throw InvalidArgument("hyperparameters: need 1 <= q_min <= q_max");
    if (m_min < 1 || m_min > m_max) throw InvalidArgument("hyperparameters: need 1 <= m_min <= m_max");
    if (!(a1 > 0 && b1 > 0 && a2 > 0 && b2 > 0)) throw InvalidArgument("hyperparameters: IG shapes/scales must be positive");
  }
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log of the inverse-gamma density with shape a and scale b.
inline double inv_gamma_logpdf(double x, double a, double b) {
  if (!(x > 0.0)) return kNegInf;
  return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

// sum_i y_i log(lambda_i) - lambda_i - log(y_i!). Zero intensities are
// floored at 1e-12 where the count is zero; a positive count at zero
// intensity has likelihood zero.
template <typename CountVec, typename RateVec>
double poisson_loglik(const CountVec& y, const RateVec& lambda) {
  if (y.size() != lambda.size()) throw InvalidArgument("poisson_loglik: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double yi = static_cast<double>(y(i));
    if (yi < 0.0) throw InvalidArgument("poisson_loglik: negative count at position " + std::to_string(i + 1));
    double li = lambda(i);
    if (!(li > 0.0)) {
      if (yi > 0.0) return kNegInf;
      li = 1e-12;
    }
    total += yi * std::log(li) - li - std::lgamma(yi + 1.0);
  }
  return total;
}

inline double discrete_uniform_logpmf(int v, int lo, int hi) {
  if (v < lo || v > hi) return kNegInf;
  return -std::log(static_cast<double>(hi - lo + 1));
}

inline double prior_logpdf(const ModelParams& p, const Hyperparams& h) {
  double lp = discrete_uniform_logpmf(p.m, h.m_min, h.m_max) + discrete_uniform_logpmf(p.q, h.q_min, h.q_max);
  if (!h.knn_grid.empty()) {
    if (std::find(h.knn_grid.begin(), h.knn_grid.end(), p.k_nn) == h.knn_grid.end()) return kNegInf;
    lp -= std::log(static_cast<double>(h.knn_grid.size()));
  }
  if (lp == kNegInf) return kNegInf;
  return lp + inv_gamma_logpdf(p.theta1, h.a1, h.b1) + inv_gamma_logpdf(p.sigma2_eta, h.a2, h.b2);
}

}  // namespace hba

#pragma once

// Forecast scoring and the climatology / persistence reference forecasts.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "hba/error.hpp"
#include "hba/fields.hpp"

namespace hba {

struct Score {
  double mspe = 0.0;
  std::optional<double> corr;  // undefined when either vector has zero variance
};

inline double mspe(const Eigen::VectorXd& forecast, const Eigen::VectorXd& observed) {
  if (forecast.size() != observed.size() || forecast.size() == 0) throw InvalidArgument("mspe: shape mismatch");
  return (forecast - observed).squaredNorm() / static_cast<double>(forecast.size());
}

inline std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("pearson: shape mismatch");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = (da * da).sum();
  const double sbb = (db * db).sum();
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return (da * db).sum() / std::sqrt(saa * sbb);
}

inline Score evaluate(const Eigen::VectorXd& forecast, const Eigen::VectorXd& observed) {
  return {mspe(forecast, observed), pearson(forecast, observed)};
}

// Per-site mean over the training periods.
inline Eigen::VectorXd climatology(const CountMatrix& y, const std::vector<int>& training) {
  if (training.empty()) throw InvalidArgument("climatology: empty training set");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(y.rows());
  for (int t : training) out += y.col(t).cast<double>();
  return out / static_cast<double>(training.size());
}

// Counts of the latest training period before the target (the latest
// training period overall when none precede it).
inline Eigen::VectorXd persistence(const CountMatrix& y, const std::vector<int>& training, int target) {
  if (training.empty()) throw InvalidArgument("persistence: empty training set");
  int pick = -1;
  for (int t : training)
    if (t < target) pick = std::max(pick, t);
  if (pick < 0) pick = *std::max_element(training.begin(), training.end());
  return y.col(pick).cast<double>();
}

}  // namespace hba

#pragma once

// Nonnegative matrix factorization of a count field, Y ~ Psi * B + u * 1',
// with NNSVD starting values and multiplicative updates.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hba/error.hpp"

namespace hba {

struct Factorization {
  Eigen::MatrixXd psi;     // n_y x n_beta basis
  Eigen::MatrixXd b;       // n_beta x T coefficients
  Eigen::VectorXd offset;  // n_y common baseline; zero when the offset is disabled
  std::vector<double> loss_trace;  // loss at the start value, then after each iteration
  int iterations = 0;
  bool converged = false;

  int rank() const { return static_cast<int>(psi.cols()); }
};

struct NmfStart {
  Eigen::MatrixXd psi;
  Eigen::MatrixXd b;
};

struct NmfOptions {
  int max_iter = 2000;
  double tol = 1e-8;
  bool offset = true;
  // Ridge penalty ridge * (|Psi|^2 + |B|^2); zero disables regularization.
  double ridge = 0.0;
};

namespace detail {
inline void require_nonnegative(const Eigen::MatrixXd& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!(m(i, j) >= 0.0))
        throw InvalidArgument(std::string(what) + ": negative or NaN entry at (" + std::to_string(i + 1) + ", " +
                              std::to_string(j + 1) + ")");
}
}  // namespace detail

// NNSVD (Boutsidis & Gallopoulos): each singular pair is split into positive
// and negative parts and the part with the larger norm product is kept.
// Exact zeros are replaced by mean(Y) * 1e-4 so multiplicative updates can
// move them.
inline NmfStart nnsvd_init(const Eigen::MatrixXd& y, int k) {
  detail::require_nonnegative(y, "nnsvd_init");
  const Eigen::Index max_rank = std::min(y.rows(), y.cols());
  if (k < 1 || k > max_rank) {
    throw InvalidArgument("nnsvd_init: rank " + std::to_string(k) + " outside [1, " + std::to_string(max_rank) + "]");
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(y, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd& u = svd.matrixU();
  const Eigen::MatrixXd& v = svd.matrixV();
  const Eigen::VectorXd& s = svd.singularValues();

  NmfStart out{Eigen::MatrixXd::Zero(y.rows(), k), Eigen::MatrixXd::Zero(k, y.cols())};
  out.psi.col(0) = std::sqrt(s(0)) * u.col(0).cwiseAbs();
  out.b.row(0) = std::sqrt(s(0)) * v.col(0).cwiseAbs().transpose();
  for (int j = 1; j < k; ++j) {
    Eigen::VectorXd xp = u.col(j).cwiseMax(0.0);
    Eigen::VectorXd xn = (-u.col(j)).cwiseMax(0.0);
    Eigen::VectorXd yp = v.col(j).cwiseMax(0.0);
    Eigen::VectorXd yn = (-v.col(j)).cwiseMax(0.0);
    const double mp = xp.norm() * yp.norm();
    const double mn = xn.norm() * yn.norm();
    Eigen::VectorXd uu;
    Eigen::VectorXd vv;
    double sigma = 0.0;
    if (mp > mn) {
      uu = xp / xp.norm();
      vv = yp / yp.norm();
      sigma = mp;
    } else if (mn > 0.0) {
      uu = xn / xn.norm();
      vv = yn / yn.norm();
      sigma = mn;
    } else {
      continue;  // rank-deficient direction; left to the zero fill
    }
    const double scale = std::sqrt(s(j) * sigma);
    out.psi.col(j) = scale * uu;
    out.b.row(j) = scale * vv.transpose();
  }
  const double fill = y.mean() * 1e-4;
  out.psi = (out.psi.array() == 0.0).select(fill, out.psi);
  out.b = (out.b.array() == 0.0).select(fill, out.b);
  return out;
}

inline double nmf_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& psi, const Eigen::MatrixXd& b,
                       const Eigen::VectorXd& offset, double ridge = 0.0) {
  Eigen::MatrixXd r = y - psi * b;
  r.colwise() -= offset;
  double loss = r.squaredNorm();
  if (ridge > 0.0) loss += ridge * (psi.squaredNorm() + b.squaredNorm());
  return loss;
}

// Multiplicative updates for min |Y - Psi B - u 1'|_F^2 over Psi, B, u >= 0.
// Each block update is the Lee-Seung step for that block with the others
// held fixed, so the loss is non-increasing.
inline Factorization fit_offset_nmf(const Eigen::MatrixXd& y, int k, const NmfStart& init,
                                    const NmfOptions& options = {}) {
  detail::require_nonnegative(y, "fit_offset_nmf");
  detail::require_nonnegative(init.psi, "fit_offset_nmf start psi");
  detail::require_nonnegative(init.b, "fit_offset_nmf start b");
  if (init.psi.rows() != y.rows() || init.psi.cols() != k || init.b.rows() != k || init.b.cols() != y.cols()) {
    throw InvalidArgument("fit_offset_nmf: start factors do not match Y and rank");
  }
  constexpr double tiny = std::numeric_limits<double>::min();
  const double ridge = options.ridge;

  Factorization f;
  f.psi = init.psi;
  f.b = init.b;
  f.offset = Eigen::VectorXd::Zero(y.rows());
  if (options.offset) f.offset.setConstant(std::max(y.mean() * 1e-4, tiny));
  const Eigen::VectorXd y_rowsum = y.rowwise().sum();
  const double n_cols = static_cast<double>(y.cols());

  f.loss_trace.push_back(nmf_loss(y, f.psi, f.b, f.offset, ridge));
  for (int it = 1; it <= options.max_iter; ++it) {
    // Psi
    {
      Eigen::MatrixXd fit = f.psi * f.b;
      fit.colwise() += f.offset;
      Eigen::MatrixXd num = y * f.b.transpose();
      Eigen::MatrixXd den = fit * f.b.transpose() + ridge * f.psi;
      f.psi = f.psi.cwiseProduct(num.cwiseQuotient(den.cwiseMax(tiny)));
    }
    // B
    {
      Eigen::MatrixXd fit = f.psi * f.b;
      fit.colwise() += f.offset;
      Eigen::MatrixXd num = f.psi.transpose() * y;
      Eigen::MatrixXd den = f.psi.transpose() * fit + ridge * f.b;
      f.b = f.b.cwiseProduct(num.cwiseQuotient(den.cwiseMax(tiny)));
    }
    // u
    if (options.offset) {
      Eigen::VectorXd den = f.psi * f.b.rowwise().sum() + n_cols * f.offset;
      f.offset = f.offset.cwiseProduct(y_rowsum.cwiseQuotient(den.cwiseMax(tiny)));
    }
    const double loss = nmf_loss(y, f.psi, f.b, f.offset, ridge);
    if (!std::isfinite(loss) || !f.psi.allFinite() || !f.b.allFinite() || !f.offset.allFinite()) {
      throw NumericalError("fit_offset_nmf: non-finite factor at iteration " + std::to_string(it));
    }
    const double prev = f.loss_trace.back();
    f.loss_trace.push_back(loss);
    f.iterations = it;
    if (std::abs(prev - loss) <= options.tol * std::max(prev, tiny)) {
      f.converged = true;
      break;
    }
  }
  return f;
}

// lambda_t = Psi beta_t + offset.
inline Eigen::VectorXd reconstruct(const Factorization& f, const Eigen::VectorXd& beta) {
  if (beta.size() != f.psi.cols()) {
    throw InvalidArgument("reconstruct: coefficient vector has length " + std::to_string(beta.size()) + ", expected " +
                          std::to_string(f.psi.cols()));
  }
  return f.psi * beta + f.offset;
}

}  // namespace hba

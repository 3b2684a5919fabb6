#pragma once

// Procrustes shape distance between two equally sized matrices. The
// comparison F is superimposed onto the target E by translation (column
// centering), an orthogonal q x q map R and a positive scale theta2:
//
//   d(E, F) = | E~ - theta2 F~ R |_F,   F~' E~ = U D V',  R = U V',
//   theta2 = tr(D) / |F~|_F^2.

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "hba/error.hpp"

namespace hba {

struct ProcrustesOptions {
  // Restrict R to proper rotations (det R = +1). Reflections are allowed by
  // default.
  bool rotation_only = false;
};

struct ProcrustesResult {
  double distance = 0.0;
  double theta2 = 1.0;
  // The centered comparison is identically zero; distance is |E~|_F and
  // theta2 = 1 by convention.
  bool degenerate = false;
};

struct ProcrustesFit {
  ProcrustesResult result;
  Eigen::MatrixXd rotation;  // q x q orthogonal
};

// Subtracts from every column its mean over rows.
inline Eigen::MatrixXd center_columns(const Eigen::MatrixXd& m) {
  return m.rowwise() - m.colwise().mean();
}

namespace detail {
inline void check_same_shape(const Eigen::MatrixXd& e, const Eigen::MatrixXd& f) {
  if (e.rows() != f.rows() || e.cols() != f.cols() || e.size() == 0)
    throw InvalidArgument("procrustes: target and comparison must have the same nonempty shape");
}
}  // namespace detail

// Full q x q construction of R. Costs one q x q SVD; the distance routine
// below reaches the same value through an n_alpha-sized problem.
inline ProcrustesFit procrustes_fit(const Eigen::MatrixXd& target, const Eigen::MatrixXd& comparison,
                                    const ProcrustesOptions& options = {}) {
  detail::check_same_shape(target, comparison);
  const Eigen::MatrixXd e = center_columns(target);
  const Eigen::MatrixXd f = center_columns(comparison);
  const Eigen::Index q = e.cols();
  ProcrustesFit out;
  const double f_norm2 = f.squaredNorm();
  if (f_norm2 == 0.0) {
    out.result = {e.norm(), 1.0, true};
    out.rotation = Eigen::MatrixXd::Identity(q, q);
    return out;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(f.transpose() * e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::MatrixXd u = svd.matrixU();
  Eigen::VectorXd s = svd.singularValues();
  if (options.rotation_only && (u * svd.matrixV().transpose()).determinant() < 0.0) {
    u.col(q - 1) *= -1.0;
    s(q - 1) *= -1.0;
  }
  out.rotation = u * svd.matrixV().transpose();
  out.result.theta2 = s.sum() / f_norm2;
  out.result.distance = (e - out.result.theta2 * f * out.rotation).norm();
  return out;
}

// Same distance as procrustes_fit, computed in the (at most) min(n, q)
// dimensional subspaces spanned by the rows: with E~' = Qe Re and
// F~' = Qf Rf (thin QR), F~' E~ = Qf (Rf Re') Qe' and the residual norm
// equals |Re' - theta2 Rf' Us Vs'|_F where Rf Re' = Us D Vs'.
inline ProcrustesResult procrustes_distance(const Eigen::MatrixXd& target, const Eigen::MatrixXd& comparison,
                                            const ProcrustesOptions& options = {}) {
  detail::check_same_shape(target, comparison);
  const Eigen::MatrixXd e = center_columns(target);
  const Eigen::MatrixXd f = center_columns(comparison);
  const Eigen::Index n = e.rows();
  const Eigen::Index q = e.cols();
  const double f_norm2 = f.squaredNorm();
  if (f_norm2 == 0.0) return {e.norm(), 1.0, true};

  const Eigen::Index k = std::min(n, q);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_e(e.transpose());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_f(f.transpose());
  const Eigen::MatrixXd re = qr_e.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd rf = qr_f.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rf * re.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::MatrixXd us = svd.matrixU();
  Eigen::VectorXd s = svd.singularValues();
  if (options.rotation_only && k == q) {
    // Qe and Qf are square here, so det R = det(Qf) det(Us Vs') det(Qe).
    // With k < q the unused directions absorb the sign and nothing binds.
    const Eigen::MatrixXd qe = qr_e.householderQ();
    const Eigen::MatrixXd qf = qr_f.householderQ();
    const double det = qf.determinant() * (us * svd.matrixV().transpose()).determinant() * qe.determinant();
    if (det < 0.0) {
      us.col(k - 1) *= -1.0;
      s(k - 1) *= -1.0;
    }
  }
  ProcrustesResult out;
  out.theta2 = s.sum() / f_norm2;
  out.distance = (re.transpose() - out.theta2 * rf.transpose() * us * svd.matrixV().transpose()).norm();
  return out;
}

}  // namespace hba

#pragma once

// Forcing-field dimension reduction: EOFs (linear) and Laplacian eigenmaps
// over forcing periods (nonlinear). Both produce one coefficient vector
// alpha_t' per forcing period.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hba/error.hpp"

namespace hba {

enum class DimredMethod { kEof, kLaplacianEigenmap };

inline std::string to_string(DimredMethod m) { return m == DimredMethod::kEof ? "eof" : "le"; }

struct ForcingCoefficients {
  Eigen::MatrixXd alpha;  // n_alpha x T'
  DimredMethod method = DimredMethod::kEof;
  int k_nn = 0;  // Laplacian eigenmaps only

  int n_alpha() const { return static_cast<int>(alpha.rows()); }
  int n_periods() const { return static_cast<int>(alpha.cols()); }
};

struct EofResult {
  Eigen::MatrixXd phi;  // n_x x n_alpha, orthonormal columns
  ForcingCoefficients coeffs;
  Eigen::VectorXd var_explained;
};

namespace detail {
// Flips the sign of each column so that its largest-magnitude entry (first
// one on ties) is positive.
inline void fix_column_signs(Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    Eigen::Index arg = 0;
    m.col(c).cwiseAbs().maxCoeff(&arg);
    if (m(arg, c) < 0.0) m.col(c) *= -1.0;
  }
}
}  // namespace detail

// Leading n_alpha left singular vectors of x, with coefficients phi' x.
inline EofResult compute_eofs(const Eigen::MatrixXd& x, int n_alpha) {
  const Eigen::Index max_rank = std::min(x.rows(), x.cols());
  if (n_alpha < 1 || n_alpha > max_rank) {
    throw InvalidArgument("compute_eofs: n_alpha " + std::to_string(n_alpha) + " outside [1, " +
                          std::to_string(max_rank) + "]");
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU);
  if (svd.info() != Eigen::Success) throw NumericalError("compute_eofs: SVD failed");
  EofResult out;
  out.phi = svd.matrixU().leftCols(n_alpha);
  detail::fix_column_signs(out.phi);
  out.coeffs.alpha = out.phi.transpose() * x;
  out.coeffs.method = DimredMethod::kEof;
  const Eigen::VectorXd s2 = svd.singularValues().array().square();
  const double total = s2.sum();
  out.var_explained = total > 0.0 ? Eigen::VectorXd(s2.head(n_alpha) / total) : Eigen::VectorXd::Zero(n_alpha);
  return out;
}

// Squared Euclidean distances between the columns of x.
inline Eigen::MatrixXd pairwise_sq_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) d(i, j) = d(j, i) = (x.col(i) - x.col(j)).squaredNorm();
  return d;
}

// Binary k-nearest-neighbor adjacency symmetrized by union. Every point tied
// with the k-th neighbor distance is included, so the graph does not depend
// on the order of the input points.
inline Eigen::MatrixXd knn_adjacency(const Eigen::MatrixXd& sq_dist, int k_nn) {
  const Eigen::Index n = sq_dist.rows();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> others;
  for (Eigen::Index i = 0; i < n; ++i) {
    others.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) others.push_back(sq_dist(i, j));
    std::nth_element(others.begin(), others.begin() + (k_nn - 1), others.end());
    const double radius = others[static_cast<std::size_t>(k_nn - 1)];
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i && sq_dist(i, j) <= radius) w(i, j) = w(j, i) = 1.0;
  }
  return w;
}

inline int count_components(const Eigen::MatrixXd& w) {
  const Eigen::Index n = w.rows();
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  int components = 0;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (label[static_cast<std::size_t>(s)] >= 0) continue;
    label[static_cast<std::size_t>(s)] = components;
    stack.push_back(s);
    while (!stack.empty()) {
      Eigen::Index u = stack.back();
      stack.pop_back();
      for (Eigen::Index v = 0; v < n; ++v) {
        if (w(u, v) != 0.0 && label[static_cast<std::size_t>(v)] < 0) {
          label[static_cast<std::size_t>(v)] = components;
          stack.push_back(v);
        }
      }
    }
    ++components;
  }
  return components;
}

// Laplacian eigenmap from precomputed squared distances between periods.
inline ForcingCoefficients laplacian_eigenmaps_from_distances(const Eigen::MatrixXd& sq_dist, int n_alpha, int k_nn) {
  const Eigen::Index n = sq_dist.rows();
  if (k_nn < 1 || k_nn >= n) {
    throw InvalidArgument("laplacian_eigenmaps: k_nn " + std::to_string(k_nn) + " must lie in [1, " +
                          std::to_string(n - 1) + "]");
  }
  if (n_alpha < 1 || n_alpha >= n) {
    throw InvalidArgument("laplacian_eigenmaps: n_alpha " + std::to_string(n_alpha) + " must lie in [1, " +
                          std::to_string(n - 1) + "]");
  }
  const Eigen::MatrixXd w = knn_adjacency(sq_dist, k_nn);
  const int components = count_components(w);
  if (components > 1) {
    throw DisconnectedGraph("laplacian_eigenmaps: k_nn=" + std::to_string(k_nn) + " neighbor graph has " +
                                std::to_string(components) + " connected components",
                            components);
  }
  const Eigen::VectorXd degree = w.rowwise().sum();
  Eigen::MatrixXd lap = -w;
  lap.diagonal() += degree;
  const Eigen::MatrixXd dmat = degree.asDiagonal();
  // L v = lambda D v; eigenvalues ascending, the first is the constant vector.
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, dmat);
  if (solver.info() != Eigen::Success) throw NumericalError("laplacian_eigenmaps: eigensolver failed");
  Eigen::MatrixXd v = solver.eigenvectors().middleCols(1, n_alpha);
  detail::fix_column_signs(v);
  ForcingCoefficients out;
  out.alpha = v.transpose();
  out.method = DimredMethod::kLaplacianEigenmap;
  out.k_nn = k_nn;
  return out;
}

// Embeds each forcing period (column of x) into n_alpha coordinates.
inline ForcingCoefficients laplacian_eigenmaps(const Eigen::MatrixXd& x, int n_alpha, int k_nn) {
  return laplacian_eigenmaps_from_distances(pairwise_sq_distances(x), n_alpha, k_nn);
}

struct LeGridEntry {
  std::optional<ForcingCoefficients> coeffs;
  std::string error;  // set when coeffs is empty

  bool ok() const { return coeffs.has_value(); }
};

// One embedding per neighbor count; failures are reported per entry.
inline std::map<int, LeGridEntry> precompute_le_grid(const Eigen::MatrixXd& x, int n_alpha,
                                                     const std::vector<int>& grid) {
  const Eigen::MatrixXd sq_dist = pairwise_sq_distances(x);
  std::map<int, LeGridEntry> out;
  for (int k : grid) {
    LeGridEntry entry;
    try {
      entry.coeffs = laplacian_eigenmaps_from_distances(sq_dist, n_alpha, k);
    } catch (const Error& e) {
      entry.error = e.what();
    }
    out.emplace(k, std::move(entry));
  }
  return out;
}

// The neighbor-count grid {6 + 3d : d = 0..10}.
inline std::vector<int> default_knn_grid() {
  std::vector<int> g;
  for (int d = 0; d <= 10; ++d) g.push_back(6 + 3 * d);
  return g;
}

}  // namespace hba

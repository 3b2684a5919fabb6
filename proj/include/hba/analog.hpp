#pragma once

// Analog selection: lagged embedding matrices, a Procrustes distance cache
// over the lag grid, and Gaussian-kernel weights on the m nearest analogs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hba/dimred.hpp"
#include "hba/error.hpp"
#include "hba/fields.hpp"
#include "hba/io.hpp"
#include "hba/procrustes.hpp"

namespace hba {

struct EmbeddingMatrix {
  Eigen::MatrixXd a;  // n_alpha x q; column j is alpha at t' - j
  int response_index = 0;
  int q = 0;
};

inline EmbeddingMatrix build_embedding(const ForcingCoefficients& coeffs, int t, int q, const TimeAlignment& alignment) {
  if (q < 1) throw InvalidArgument("build_embedding: q must be >= 1");
  const int tp = alignment(t);
  if (tp - (q - 1) < 0) {
    throw InsufficientHistory("build_embedding: response index " + std::to_string(t) + " anchors at forcing index " +
                              std::to_string(tp) + ", too early for q=" + std::to_string(q));
  }
  if (tp >= coeffs.n_periods()) {
    throw InsufficientHistory("build_embedding: forcing index " + std::to_string(tp) + " beyond coefficient record");
  }
  EmbeddingMatrix e;
  e.response_index = t;
  e.q = q;
  e.a.resize(coeffs.n_alpha(), q);
  for (int j = 0; j < q; ++j) e.a.col(j) = coeffs.alpha.col(tp - j);
  return e;
}

// Pairwise Procrustes distances d(A_t, A_l) for every lag q in [q_min, q_max]
// and every neighbor-count key (a single key 0 for EOF coefficients).
struct DistanceCache {
  DimredMethod method = DimredMethod::kEof;
  int n_alpha = 0;
  int q_min = 0;
  int q_max = 0;
  std::vector<int> keys;     // k_nn values, or {0}
  std::vector<int> indices;  // covered response indices, ascending
  // [key][q - q_min] -> matrix over positions in `indices`; row = target.
  std::vector<std::vector<Eigen::MatrixXd>> distance;
  std::vector<std::vector<Eigen::MatrixXd>> theta2;

  int position(int response_index) const {
    auto it = std::lower_bound(indices.begin(), indices.end(), response_index);
    if (it == indices.end() || *it != response_index) {
      throw InvalidArgument("distance cache: response index " + std::to_string(response_index) + " not cached");
    }
    return static_cast<int>(it - indices.begin());
  }

  int key_slot(int k_nn) const {
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i] == k_nn) return static_cast<int>(i);
    throw InvalidArgument("distance cache: no entry for k_nn=" + std::to_string(k_nn));
  }

  const Eigen::MatrixXd& distances(int q, int k_nn = 0) const {
    if (q < q_min || q > q_max) throw InvalidArgument("distance cache: q=" + std::to_string(q) + " outside cached range");
    return distance[static_cast<std::size_t>(key_slot(k_nn))][static_cast<std::size_t>(q - q_min)];
  }

  double operator()(int q, int k_nn, int target, int comparison) const {
    return distances(q, k_nn)(position(target), position(comparison));
  }
};

// Builds the cache; coefficient sets are keyed by k_nn (use key 0 for EOF).
// Work is split over (key, q) pairs across `threads` workers; every entry is
// computed independently so the result does not depend on the split.
inline DistanceCache build_distance_cache(const std::map<int, ForcingCoefficients>& coeffs_by_key,
                                          const TimeAlignment& alignment, int q_min, int q_max,
                                          std::vector<int> indices, const ProcrustesOptions& options = {},
                                          unsigned threads = 0) {
  if (coeffs_by_key.empty()) throw InvalidArgument("build_distance_cache: no coefficient sets");
  if (q_min < 1 || q_min > q_max) throw InvalidArgument("build_distance_cache: need 1 <= q_min <= q_max");
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  if (indices.empty()) throw InvalidArgument("build_distance_cache: no response indices");

  DistanceCache cache;
  cache.method = coeffs_by_key.begin()->second.method;
  cache.n_alpha = coeffs_by_key.begin()->second.n_alpha();
  cache.q_min = q_min;
  cache.q_max = q_max;
  cache.indices = indices;
  for (const auto& [key, coeffs] : coeffs_by_key) {
    cache.keys.push_back(key);
    // Fail fast on history before spawning work.
    for (int t : indices) build_embedding(coeffs, t, q_max, alignment);
  }
  const std::size_t n_keys = cache.keys.size();
  const int n_q = q_max - q_min + 1;
  const auto n = static_cast<Eigen::Index>(indices.size());
  cache.distance.assign(n_keys, std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(n_q), Eigen::MatrixXd::Zero(n, n)));
  cache.theta2.assign(n_keys, std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(n_q), Eigen::MatrixXd::Ones(n, n)));

  std::vector<const ForcingCoefficients*> sets;
  for (const auto& kv : coeffs_by_key) sets.push_back(&kv.second);

  auto work = [&](std::size_t job) {
    const std::size_t key = job / static_cast<std::size_t>(n_q);
    const int q = q_min + static_cast<int>(job % static_cast<std::size_t>(n_q));
    std::vector<EmbeddingMatrix> emb;
    emb.reserve(indices.size());
    for (int t : indices) emb.push_back(build_embedding(*sets[key], t, q, alignment));
    auto& d = cache.distance[key][static_cast<std::size_t>(q - q_min)];
    auto& th = cache.theta2[key][static_cast<std::size_t>(q - q_min)];
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        auto r = procrustes_distance(emb[static_cast<std::size_t>(i)].a, emb[static_cast<std::size_t>(j)].a, options);
        d(i, j) = r.distance;
        th(i, j) = r.theta2;
      }
    }
  };
  const std::size_t jobs = n_keys * static_cast<std::size_t>(n_q);
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, jobs));
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs; ++j) work(j);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < jobs; j += workers) work(j);
      });
    }
    for (auto& th : pool) th.join();
  }
  return cache;
}

inline DistanceCache build_distance_cache(const ForcingCoefficients& coeffs, const TimeAlignment& alignment, int q_min,
                                          int q_max, std::vector<int> indices, const ProcrustesOptions& options = {},
                                          unsigned threads = 0) {
  return build_distance_cache(std::map<int, ForcingCoefficients>{{coeffs.k_nn, coeffs}}, alignment, q_min, q_max,
                              std::move(indices), options, threads);
}

inline void write_distance_cache(std::ostream& out, const DistanceCache& c) {
  out << "hba-distance-cache 1\n"
      << to_string(c.method) << ' ' << c.n_alpha << ' ' << c.q_min << ' ' << c.q_max << '\n'
      << c.keys.size();
  for (int k : c.keys) out << ' ' << k;
  out << '\n' << c.indices.size();
  for (int t : c.indices) out << ' ' << t;
  out << '\n';
  for (std::size_t k = 0; k < c.keys.size(); ++k) {
    for (std::size_t q = 0; q < c.distance[k].size(); ++q) {
      write_matrix(out, c.distance[k][q]);
      write_matrix(out, c.theta2[k][q]);
    }
  }
}

inline DistanceCache read_distance_cache(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "hba-distance-cache" || version != 1)
    throw ParseError("not a distance cache file");
  DistanceCache c;
  std::string method;
  std::size_t n_keys = 0;
  std::size_t n_idx = 0;
  in >> method >> c.n_alpha >> c.q_min >> c.q_max >> n_keys;
  c.method = method == "le" ? DimredMethod::kLaplacianEigenmap : DimredMethod::kEof;
  c.keys.resize(n_keys);
  for (auto& k : c.keys) in >> k;
  in >> n_idx;
  c.indices.resize(n_idx);
  for (auto& t : c.indices) in >> t;
  if (!in) throw ParseError("truncated distance cache header");
  const auto n_q = static_cast<std::size_t>(c.q_max - c.q_min + 1);
  c.distance.assign(n_keys, std::vector<Eigen::MatrixXd>(n_q));
  c.theta2.assign(n_keys, std::vector<Eigen::MatrixXd>(n_q));
  for (std::size_t k = 0; k < n_keys; ++k) {
    for (std::size_t q = 0; q < n_q; ++q) {
      c.distance[k][q] = read_matrix(in);
      c.theta2[k][q] = read_matrix(in);
    }
  }
  return c;
}

// Kernel weights over a candidate set. omega is aligned with `candidates`;
// entries outside the neighborhood are exactly zero.
struct WeightVector {
  std::vector<int> candidates;
  Eigen::VectorXd omega;
  std::vector<int> neighborhood;  // response indices, nearest first
};

// Unnormalized kernel exp(-d^2 / (2 theta1)).
inline double kernel_weight_unnormalized(double d, double theta1) { return std::exp(-d * d / (2.0 * theta1)); }

// Candidates ordered by (distance, index): the smaller response index wins a
// distance tie.
struct RankedCandidates {
  std::vector<int> index;
  std::vector<double> dist;
};

inline RankedCandidates rank_candidates(const Eigen::Ref<const Eigen::RowVectorXd>& dist_row,
                                        const std::vector<int>& candidate_positions,
                                        const std::vector<int>& candidate_indices) {
  std::vector<std::pair<double, int>> order;
  order.reserve(candidate_positions.size());
  for (std::size_t c = 0; c < candidate_positions.size(); ++c)
    order.emplace_back(dist_row(candidate_positions[c]), candidate_indices[c]);
  std::sort(order.begin(), order.end());
  RankedCandidates out;
  out.index.reserve(order.size());
  out.dist.reserve(order.size());
  for (const auto& [d, idx] : order) {
    out.dist.push_back(d);
    out.index.push_back(idx);
  }
  return out;
}

// Normalized weights of the m nearest ranked candidates. The shared factor
// exp(-d_min^2 / (2 theta1)) cancels in the normalization and is divided out
// first so that large d^2/theta1 does not underflow every weight.
inline void neighborhood_weights(const RankedCandidates& ranked, int m, double theta1, double* out) {
  if (!(theta1 > 0.0) || !std::isfinite(theta1)) {
    throw DegenerateKernel("kernel weights: theta1=" + std::to_string(theta1) + " must be positive and finite");
  }
  const double d0 = ranked.dist.front();
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double d = ranked.dist[static_cast<std::size_t>(i)];
    out[i] = std::exp(-(d - d0) * (d + d0) / (2.0 * theta1));
    total += out[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateKernel("kernel weights: degenerate kernel (theta1=" + std::to_string(theta1) +
                           ", min d=" + std::to_string(d0) + ")");
  }
  for (int i = 0; i < m; ++i) out[i] /= total;
}

inline WeightVector kernel_weights(int target, const std::vector<int>& candidates, const DistanceCache& cache, int q,
                                   int m, double theta1, int k_nn = 0) {
  std::vector<int> cand;
  for (int c : candidates)
    if (c != target) cand.push_back(c);
  if (m < 1 || m > static_cast<int>(cand.size())) {
    throw InvalidArgument("kernel_weights: m=" + std::to_string(m) + " outside [1, " + std::to_string(cand.size()) + "]");
  }
  std::vector<int> pos;
  pos.reserve(cand.size());
  for (int c : cand) pos.push_back(cache.position(c));
  const Eigen::MatrixXd& d = cache.distances(q, k_nn);
  const RankedCandidates ranked = rank_candidates(d.row(cache.position(target)), pos, cand);

  std::vector<double> w(static_cast<std::size_t>(m));
  neighborhood_weights(ranked, m, theta1, w.data());
  WeightVector out;
  out.candidates = cand;
  out.omega = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cand.size()));
  for (int i = 0; i < m; ++i) {
    const int idx = ranked.index[static_cast<std::size_t>(i)];
    out.neighborhood.push_back(idx);
    const auto slot = std::find(cand.begin(), cand.end(), idx) - cand.begin();
    out.omega(slot) = w[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace hba

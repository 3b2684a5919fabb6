#pragma once

// Posterior-predictive forecast of Y at a target period from kept draws:
// beta_target = B^(l) w_target^(l), then Y ~ Poi(Psi beta_target + offset).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "hba/analog.hpp"
#include "hba/distributions.hpp"
#include "hba/error.hpp"
#include "hba/rng.hpp"
#include "hba/sampler.hpp"
#include "hba/truncnorm.hpp"

namespace hba {

struct ForecastOptions {
  // Draw beta_target from the truncated normal process density around the
  // analog mean instead of using the mean itself.
  bool process_noise = false;
  double eps = 1e-6;
};

struct ForecastResult {
  int target = 0;
  std::vector<int> training;
  CountMatrix draws;             // n_y x L
  Eigen::MatrixXd beta;          // n_beta x L
  Eigen::MatrixXd weights;       // L x N over training periods
  std::vector<int> top_analog;   // per draw, response index of the largest weight
  Eigen::VectorXd mean;          // predictive mean of Y
  Eigen::VectorXd lower;         // 2.5th percentile
  Eigen::VectorXd upper;         // 97.5th percentile
  // Mean intensity under each beta composition (diagnostic).
  Eigen::VectorXd intensity_point;
  Eigen::VectorXd intensity_noise;
  bool process_noise = false;
};

// Type-7 quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InvalidArgument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline ForecastResult forecast(const ChainOutput& output, const DistanceCache& cache, int target,
                               const Eigen::MatrixXd& psi, const Eigen::VectorXd& offset, Rng& rng,
                               const ForecastOptions& options = {}) {
  const auto L = static_cast<Eigen::Index>(output.beta_draws.size());
  if (L == 0) throw InvalidArgument("forecast: chain has no kept draws");
  const std::vector<int>& training = output.training;
  if (std::find(training.begin(), training.end(), target) != training.end())
    throw InvalidArgument("forecast: target period is part of the training set");
  cache.position(target);

  std::vector<int> cand_pos;
  std::vector<int> cand_idx;
  for (std::size_t i = 0; i < training.size(); ++i) {
    cand_pos.push_back(cache.position(training[i]));
    cand_idx.push_back(static_cast<int>(i));
  }
  const auto N = static_cast<Eigen::Index>(training.size());
  const Eigen::Index n_beta = psi.cols();
  const Eigen::Index n_y = psi.rows();

  ForecastResult res;
  res.target = target;
  res.training = training;
  res.process_noise = options.process_noise;
  res.draws.resize(n_y, L);
  res.beta.resize(n_beta, L);
  res.weights = Eigen::MatrixXd::Zero(L, N);
  res.intensity_point = Eigen::VectorXd::Zero(n_y);
  res.intensity_noise = Eigen::VectorXd::Zero(n_y);

  Rng alt(rng.engine()());  // drives the diagnostic variant only
  std::vector<double> w;
  for (Eigen::Index l = 0; l < L; ++l) {
    const ModelParams& p = output.param_draws[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd& B = output.beta_draws[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd& d = cache.distances(p.q, p.k_nn);
    const RankedCandidates ranked = rank_candidates(d.row(cache.position(target)), cand_pos, cand_idx);
    if (p.m > static_cast<int>(N)) throw InvalidArgument("forecast: m exceeds the number of training periods");
    w.assign(static_cast<std::size_t>(p.m), 0.0);
    neighborhood_weights(ranked, p.m, p.theta1, w.data());

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n_beta);
    for (int i = 0; i < p.m; ++i) {
      const int pos = ranked.index[static_cast<std::size_t>(i)];
      res.weights(l, pos) = w[static_cast<std::size_t>(i)];
      mu += w[static_cast<std::size_t>(i)] * B.col(pos);
    }
    Eigen::Index best = 0;
    res.weights.row(l).maxCoeff(&best);
    res.top_analog.push_back(training[static_cast<std::size_t>(best)]);

    Eigen::VectorXd noisy(n_beta);
    Rng& noise_rng = options.process_noise ? rng : alt;
    for (Eigen::Index j = 0; j < n_beta; ++j) {
      const double loc = mu(j) > 0.0 ? std::max(bias_correct_h(mu(j), p.sigma2_eta), options.eps) : options.eps;
      noisy(j) = tn_sample(noise_rng, loc, p.sigma2_eta);
    }
    const Eigen::VectorXd lam_point = psi * mu + offset;
    const Eigen::VectorXd lam_noise = psi * noisy + offset;
    res.intensity_point += lam_point;
    res.intensity_noise += lam_noise;

    res.beta.col(l) = options.process_noise ? noisy : mu;
    const Eigen::VectorXd& lam = options.process_noise ? lam_noise : lam_point;
    for (Eigen::Index i = 0; i < n_y; ++i) res.draws(i, l) = rng.poisson(lam(i));
  }
  res.intensity_point /= static_cast<double>(L);
  res.intensity_noise /= static_cast<double>(L);

  res.mean = res.draws.cast<double>().rowwise().mean();
  res.lower.resize(n_y);
  res.upper.resize(n_y);
  std::vector<double> row(static_cast<std::size_t>(L));
  for (Eigen::Index i = 0; i < n_y; ++i) {
    for (Eigen::Index l = 0; l < L; ++l) row[static_cast<std::size_t>(l)] = static_cast<double>(res.draws(i, l));
    res.lower(i) = quantile(row, 0.025);
    res.upper(i) = quantile(row, 0.975);
  }
  return res;
}

// Pools several chains' kept draws (same training set) into one output.
inline ChainOutput pool_chains(const std::vector<ChainOutput>& chains) {
  if (chains.empty()) throw InvalidArgument("pool_chains: no chains");
  ChainOutput out = chains.front();
  for (std::size_t c = 1; c < chains.size(); ++c) {
    if (chains[c].training != out.training) throw InvalidArgument("pool_chains: training sets differ");
    out.beta_draws.insert(out.beta_draws.end(), chains[c].beta_draws.begin(), chains[c].beta_draws.end());
    out.param_draws.insert(out.param_draws.end(), chains[c].param_draws.begin(), chains[c].param_draws.end());
  }
  return out;
}

}  // namespace hba

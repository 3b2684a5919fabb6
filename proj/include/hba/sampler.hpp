#pragma once

// Metropolis-within-Gibbs sampler for the hierarchical analog model
//
//   Y_t | beta_t          ~ Poi(Psi beta_t + offset)
//   beta_t | B_-t, Theta  ~ TN_[0,inf)(max{h(B_-t w_t, sigma2), eps}, sigma2)
//   q, m ~ DU,  theta1 ~ IG(a1, b1),  sigma2 ~ IG(a2, b2)
//
// with componentwise log-scale random-walk updates for beta, inverse
// transform draws for m and q (and k_nn with Laplacian-eigenmap
// coefficients), and log-scale random-walk updates for theta1 and sigma2.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hba/analog.hpp"
#include "hba/distributions.hpp"
#include "hba/error.hpp"
#include "hba/fields.hpp"
#include "hba/rng.hpp"
#include "hba/truncnorm.hpp"

namespace hba {

struct SamplerConfig {
  int iterations = 20000;
  int burn_in = 2000;
  int thin = 1;
  Hyperparams hyper;
  std::optional<ModelParams> initial;  // defaults derived from hyper and the start coefficients

  // Variances of the log-scale random-walk proposals.
  double beta_proposal_var = 0.05;
  double theta1_proposal_var = 0.25;
  double sigma2_proposal_var = 0.25;

  // Burn-in adaptation of proposal variances toward the acceptance band.
  bool adapt = true;
  int adapt_interval = 50;
  double target_accept_low = 0.30;
  double target_accept_high = 0.45;

  // Include the change-of-variables factor of the log-scale proposals; off
  // reproduces the ratio without it.
  bool jacobian = true;
  // Visit (j, t) in a fresh random order each sweep instead of j-major order.
  bool random_sweep = false;

  bool sample_beta = true;
  bool sample_m = true;
  bool sample_q = true;
  bool sample_theta1 = true;
  bool sample_sigma2 = true;
  bool sample_knn = true;

  // When false, the theta1 and sigma2 ratios use only their priors.
  bool hyper_uses_process = true;
  // Analog pool used for B_-t in place of the current coefficients
  // (n_beta x N). Makes the coefficient prior proper; used for testing.
  std::optional<Eigen::MatrixXd> frozen_analog_pool;
};

struct SamplerData {
  CountMatrix y;               // n_y x N, column i is training period training[i]
  std::vector<int> training;   // response indices, ascending
  Eigen::MatrixXd psi;         // n_y x n_beta
  Eigen::VectorXd offset;      // n_y
  Eigen::MatrixXd beta_start;  // n_beta x N
};

struct AcceptanceRates {
  double beta = 0.0;
  Eigen::MatrixXd beta_by_entry;
  double theta1 = 0.0;
  double sigma2 = 0.0;
};

struct ChainOutput {
  std::vector<int> training;
  int iterations = 0;
  int burn_in = 0;
  int thin = 1;
  std::vector<Eigen::MatrixXd> beta_draws;
  std::vector<ModelParams> param_draws;
  std::vector<double> log_posterior_trace;  // every iteration
  std::vector<ModelParams> param_trace;     // every iteration
  AcceptanceRates acceptance;               // kept iterations (all iterations if none kept)
  Eigen::MatrixXd beta_proposal_var;        // final (frozen) tuning
  double theta1_proposal_var = 0.0;
  double sigma2_proposal_var = 0.0;
};

// Sparse kernel weights of one target over training positions.
struct AnalogWeights {
  std::vector<int> pos;
  std::vector<double> w;
};

class AnalogSampler {
 public:
  AnalogSampler(SamplerData data, const DistanceCache& cache, SamplerConfig config, std::uint64_t seed)
      : data_(std::move(data)), cache_(cache), config_(std::move(config)), rng_(seed) {
    config_.hyper.validate();
    n_beta_ = static_cast<int>(data_.psi.cols());
    n_ = static_cast<int>(data_.training.size());
    check_inputs();
    build_rankings();

    beta_ = data_.beta_start.cwiseMax(config_.hyper.eps);
    params_ = config_.initial ? *config_.initial : default_initial();
    check_params(params_);
    zeta_ = Eigen::MatrixXd::Constant(n_beta_, n_, config_.beta_proposal_var);
    theta1_var_ = config_.theta1_proposal_var;
    sigma2_var_ = config_.sigma2_proposal_var;

    lambda_.resize(data_.y.rows(), n_);
    ll_.resize(n_);
    for (int t = 0; t < n_; ++t) {
      lambda_.col(t) = data_.psi * beta_.col(t) + data_.offset;
      ll_(t) = poisson_loglik(data_.y.col(t), lambda_.col(t));
    }
    auto proc = evaluate_process(params_, beta_);
    adopt(std::move(proc));
    if (!std::isfinite(log_posterior())) throw NumericalError("sampler: non-finite log posterior at the start values");
  }

  // Full-conditional blocks, in sweep order.
  void step_beta();
  void step_m();
  void step_q();
  void step_knn();
  void step_theta1();
  void step_sigma2();

  // One iteration of every enabled block.
  void iterate() {
    if (config_.sample_beta) step_beta();
    if (config_.sample_m) step_m();
    if (config_.sample_q) step_q();
    if (config_.sample_knn && !config_.hyper.knn_grid.empty()) step_knn();
    if (config_.sample_theta1) step_theta1();
    if (config_.sample_sigma2) step_sigma2();
  }

  ChainOutput run();

  // Replaces the response matrix (successive-conditional simulation).
  void set_counts(const CountMatrix& y) {
    if (y.rows() != data_.y.rows() || y.cols() != data_.y.cols()) throw InvalidArgument("set_counts: shape mismatch");
    data_.y = y;
    for (int t = 0; t < n_; ++t) ll_(t) = poisson_loglik(data_.y.col(t), lambda_.col(t));
  }
  void set_state(const Eigen::MatrixXd& beta, const ModelParams& params) {
    check_params(params);
    beta_ = beta;
    params_ = params;
    for (int t = 0; t < n_; ++t) {
      lambda_.col(t) = data_.psi * beta_.col(t) + data_.offset;
      ll_(t) = poisson_loglik(data_.y.col(t), lambda_.col(t));
    }
    adopt(evaluate_process(params_, beta_));
  }

  const Eigen::MatrixXd& beta() const { return beta_; }
  const ModelParams& params() const { return params_; }
  const Eigen::MatrixXd& analog_mean() const { return mu_; }
  const std::vector<AnalogWeights>& weights() const { return weights_; }
  int n_beta() const { return n_beta_; }
  int n_periods() const { return n_; }
  const SamplerData& data() const { return data_; }
  Rng& rng() { return rng_; }

  // Kernel weights of training period t as a dense vector over the other
  // training periods.
  WeightVector weight_vector(int t) const {
    WeightVector out;
    for (int s = 0; s < n_; ++s)
      if (s != t) out.candidates.push_back(data_.training[static_cast<std::size_t>(s)]);
    out.omega = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out.candidates.size()));
    const auto& aw = weights_[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < aw.pos.size(); ++i) {
      const int p = aw.pos[i];
      out.neighborhood.push_back(data_.training[static_cast<std::size_t>(p)]);
      out.omega(p < t ? p : p - 1) = aw.w[i];
    }
    return out;
  }

  // Cached log posterior (up to a constant).
  double log_posterior() const { return ll_.sum() + lp_.sum() + prior_logpdf(params_, config_.hyper); }

  // Recomputes the log posterior from scratch through kernel_weights(); an
  // independent route used to check the incremental bookkeeping.
  double full_log_posterior(const Eigen::MatrixXd& beta, const ModelParams& params) const {
    double total = prior_logpdf(params, config_.hyper);
    const Eigen::MatrixXd& pool = config_.frozen_analog_pool ? *config_.frozen_analog_pool : beta;
    for (int t = 0; t < n_; ++t) {
      const Eigen::VectorXd lam = data_.psi * beta.col(t) + data_.offset;
      total += poisson_loglik(data_.y.col(t), lam);
      WeightVector wv = kernel_weights(data_.training[static_cast<std::size_t>(t)], data_.training, cache_, params.q,
                                       params.m, params.theta1, params.k_nn);
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(n_beta_);
      for (std::size_t c = 0; c < wv.candidates.size(); ++c) {
        if (wv.omega(static_cast<Eigen::Index>(c)) == 0.0) continue;
        mean += wv.omega(static_cast<Eigen::Index>(c)) * pool.col(position(wv.candidates[c]));
      }
      for (int j = 0; j < n_beta_; ++j)
        total += tn_logpdf(beta(j, t), process_location(mean(j), params.sigma2_eta), params.sigma2_eta);
    }
    return total;
  }

  // log acceptance ratio of proposing `proposal` for beta(j, t), from the
  // incremental (restricted) terms.
  double log_ratio_beta(int j, int t, double proposal) const {
    const double old = beta_(j, t);
    const double delta = proposal - old;
    const Eigen::VectorXd lam = lambda_.col(t) + delta * data_.psi.col(j);
    double r = poisson_loglik(data_.y.col(t), lam) - ll_(t);
    r += tn_logpdf(proposal, loc_(j, t), params_.sigma2_eta) - lp_(j, t);
    if (!config_.frozen_analog_pool) {
      for (const auto& [s, w] : reverse_[static_cast<std::size_t>(t)]) {
        const double loc = process_location(mu_(j, s) + w * delta, params_.sigma2_eta);
        r += tn_logpdf(beta_(j, s), loc, params_.sigma2_eta) - lp_(j, s);
      }
    }
    if (config_.jacobian) r += std::log(proposal) - std::log(old);
    return r;
  }

  // Location of the truncated normal process density for analog mean mu.
  double process_location(double mu, double sigma2) const {
    if (!(mu > 0.0)) return config_.hyper.eps;
    return std::max(bias_correct_h(mu, sigma2), config_.hyper.eps);
  }

 private:
  struct ProcessEval {
    std::vector<AnalogWeights> weights;
    Eigen::MatrixXd mu;
    Eigen::MatrixXd loc;
    Eigen::MatrixXd lp;
    double total = 0.0;
  };

  void check_inputs() const {
    if (n_ < 2) throw InvalidArgument("sampler: need at least two training periods");
    if (!std::is_sorted(data_.training.begin(), data_.training.end()))
      throw InvalidArgument("sampler: training indices must be ascending");
    if (data_.y.cols() != n_ || data_.psi.rows() != data_.y.rows() || data_.offset.size() != data_.y.rows() ||
        data_.beta_start.rows() != n_beta_ || data_.beta_start.cols() != n_) {
      throw InvalidArgument("sampler: inconsistent data dimensions");
    }
    const auto& h = config_.hyper;
    if (h.m_max > n_ - 1) {
      throw InvalidArgument("sampler: m_max=" + std::to_string(h.m_max) + " exceeds the " + std::to_string(n_ - 1) +
                            " available analogs");
    }
    if (h.q_min < cache_.q_min || h.q_max > cache_.q_max)
      throw InvalidArgument("sampler: q range not covered by the distance cache");
    for (int k : h.knn_grid) cache_.key_slot(k);
    if (config_.frozen_analog_pool &&
        (config_.frozen_analog_pool->rows() != n_beta_ || config_.frozen_analog_pool->cols() != n_))
      throw InvalidArgument("sampler: frozen analog pool has the wrong shape");
  }

  void check_params(const ModelParams& p) const {
    if (!std::isfinite(prior_logpdf(p, config_.hyper)))
      throw InvalidArgument("sampler: start parameters outside the prior support");
  }

  ModelParams default_initial() const {
    const auto& h = config_.hyper;
    ModelParams p;
    p.m = (h.m_min + h.m_max) / 2;
    p.q = (h.q_min + h.q_max) / 2;
    p.theta1 = h.b1 / (h.a1 + 1.0);
    const double mean = beta_.mean();
    const double var = (beta_.array() - mean).square().mean();
    p.sigma2_eta = var > 0.0 ? var : 1.0;
    p.k_nn = h.knn_grid.empty() ? cache_.keys.front() : h.knn_grid[h.knn_grid.size() / 2];
    return p;
  }

  int position(int response_index) const {
    auto it = std::lower_bound(data_.training.begin(), data_.training.end(), response_index);
    return static_cast<int>(it - data_.training.begin());
  }

  // ranked_[key slot][q - q_min][t]: other training positions by distance.
  void build_rankings() {
    std::vector<int> cache_pos;
    for (int t : data_.training) cache_pos.push_back(cache_.position(t));
    ranked_.resize(cache_.keys.size());
    for (std::size_t k = 0; k < cache_.keys.size(); ++k) {
      ranked_[k].resize(static_cast<std::size_t>(cache_.q_max - cache_.q_min + 1));
      for (int q = cache_.q_min; q <= cache_.q_max; ++q) {
        const Eigen::MatrixXd& d = cache_.distance[k][static_cast<std::size_t>(q - cache_.q_min)];
        auto& per_t = ranked_[k][static_cast<std::size_t>(q - cache_.q_min)];
        per_t.resize(static_cast<std::size_t>(n_));
        for (int t = 0; t < n_; ++t) {
          std::vector<int> pos;
          std::vector<int> cpos;
          for (int s = 0; s < n_; ++s) {
            if (s == t) continue;
            pos.push_back(s);
            cpos.push_back(cache_pos[static_cast<std::size_t>(s)]);
          }
          per_t[static_cast<std::size_t>(t)] = rank_candidates(d.row(cache_pos[static_cast<std::size_t>(t)]), cpos, pos);
        }
      }
    }
  }

  std::vector<AnalogWeights> compute_weights(const ModelParams& p) const {
    const auto& per_t = ranked_[static_cast<std::size_t>(cache_.key_slot(p.k_nn))][static_cast<std::size_t>(p.q - cache_.q_min)];
    std::vector<AnalogWeights> out(static_cast<std::size_t>(n_));
    for (int t = 0; t < n_; ++t) {
      const RankedCandidates& r = per_t[static_cast<std::size_t>(t)];
      auto& aw = out[static_cast<std::size_t>(t)];
      aw.w.resize(static_cast<std::size_t>(p.m));
      neighborhood_weights(r, p.m, p.theta1, aw.w.data());
      aw.pos.assign(r.index.begin(), r.index.begin() + p.m);
    }
    return out;
  }

  Eigen::MatrixXd analog_means(const std::vector<AnalogWeights>& weights, const Eigen::MatrixXd& beta) const {
    const Eigen::MatrixXd& pool = config_.frozen_analog_pool ? *config_.frozen_analog_pool : beta;
    Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(n_beta_, n_);
    for (int t = 0; t < n_; ++t) {
      const auto& aw = weights[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < aw.pos.size(); ++i) mu.col(t) += aw.w[i] * pool.col(aw.pos[i]);
    }
    return mu;
  }

  void process_densities(ProcessEval& ev, double sigma2, const Eigen::MatrixXd& beta) const {
    ev.loc.resize(n_beta_, n_);
    ev.lp.resize(n_beta_, n_);
    for (int t = 0; t < n_; ++t) {
      for (int j = 0; j < n_beta_; ++j) {
        ev.loc(j, t) = process_location(ev.mu(j, t), sigma2);
        ev.lp(j, t) = tn_logpdf(beta(j, t), ev.loc(j, t), sigma2);
      }
    }
    ev.total = ev.lp.sum();
  }

  ProcessEval evaluate_process(const ModelParams& p, const Eigen::MatrixXd& beta) const {
    ProcessEval ev;
    ev.weights = compute_weights(p);
    ev.mu = analog_means(ev.weights, beta);
    process_densities(ev, p.sigma2_eta, beta);
    return ev;
  }

  void adopt(ProcessEval&& ev) {
    weights_ = std::move(ev.weights);
    mu_ = std::move(ev.mu);
    loc_ = std::move(ev.loc);
    lp_ = std::move(ev.lp);
    rebuild_reverse();
  }

  void rebuild_reverse() {
    reverse_.assign(static_cast<std::size_t>(n_), {});
    for (int s = 0; s < n_; ++s) {
      const auto& aw = weights_[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < aw.pos.size(); ++i)
        if (aw.w[i] > 0.0) reverse_[static_cast<std::size_t>(aw.pos[i])].emplace_back(s, aw.w[i]);
    }
  }

  // Inverse-transform draw from unnormalized log probabilities.
  std::size_t draw_discrete(const std::vector<double>& logp) {
    const double top = *std::max_element(logp.begin(), logp.end());
    if (!std::isfinite(top)) throw NumericalError("sampler: every grid candidate has zero density");
    std::vector<double> cdf(logp.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) {
      acc += std::exp(logp[i] - top);
      cdf[i] = acc;
    }
    const double u = rng_.uniform() * acc;
    for (std::size_t i = 0; i < cdf.size(); ++i)
      if (u < cdf[i]) return i;
    return cdf.size() - 1;
  }

  template <typename Mutate>
  void grid_step(const std::vector<int>& grid, Mutate mutate) {
    std::vector<ProcessEval> evals;
    std::vector<double> logp;
    evals.reserve(grid.size());
    for (int v : grid) {
      ModelParams p = params_;
      mutate(p, v);
      evals.push_back(evaluate_process(p, beta_));
      logp.push_back(evals.back().total);
    }
    const std::size_t pick = draw_discrete(logp);
    mutate(params_, grid[pick]);
    adopt(std::move(evals[pick]));
  }

  bool accept(double log_ratio, const char* what) {
    if (std::isnan(log_ratio)) throw NumericalError(std::string("sampler: NaN acceptance ratio in ") + what);
    return std::log(rng_.uniform()) < log_ratio;
  }

  void adapt_proposals(int window) {
    auto scale = [&](double rate, double& var) {
      if (rate < config_.target_accept_low) var *= rate < 0.05 ? 0.2 : 0.6;
      else if (rate > config_.target_accept_high) var *= rate > 0.8 ? 3.0 : 1.5;
    };
    for (int t = 0; t < n_; ++t)
      for (int j = 0; j < n_beta_; ++j) scale(window_beta_(j, t) / window, zeta_(j, t));
    scale(window_theta1_ / window, theta1_var_);
    scale(window_sigma2_ / window, sigma2_var_);
    window_beta_.setZero();
    window_theta1_ = 0.0;
    window_sigma2_ = 0.0;
  }

  SamplerData data_;
  const DistanceCache& cache_;
  SamplerConfig config_;
  Rng rng_;
  int n_beta_ = 0;
  int n_ = 0;

  Eigen::MatrixXd beta_;
  ModelParams params_;
  std::vector<AnalogWeights> weights_;
  std::vector<std::vector<std::pair<int, double>>> reverse_;  // t -> (s, weight of t in s)
  Eigen::MatrixXd mu_;
  Eigen::MatrixXd loc_;
  Eigen::MatrixXd lp_;
  Eigen::MatrixXd lambda_;
  Eigen::VectorXd ll_;
  std::vector<std::vector<std::vector<RankedCandidates>>> ranked_;

  Eigen::MatrixXd zeta_;
  double theta1_var_ = 0.0;
  double sigma2_var_ = 0.0;

  // acceptance bookkeeping
  Eigen::MatrixXd window_beta_;
  double window_theta1_ = 0.0;
  double window_sigma2_ = 0.0;
  Eigen::MatrixXd total_beta_;
  double total_theta1_ = 0.0;
  double total_sigma2_ = 0.0;
  bool counting_ = false;
};

inline void AnalogSampler::step_beta() {
  std::vector<std::pair<int, int>> order;
  order.reserve(static_cast<std::size_t>(n_beta_ * n_));
  for (int j = 0; j < n_beta_; ++j)
    for (int t = 0; t < n_; ++t) order.emplace_back(j, t);
  if (config_.random_sweep) std::shuffle(order.begin(), order.end(), rng_.engine());
  if (window_beta_.size() == 0) window_beta_ = Eigen::MatrixXd::Zero(n_beta_, n_);
  if (total_beta_.size() == 0) total_beta_ = Eigen::MatrixXd::Zero(n_beta_, n_);

  const double sigma2 = params_.sigma2_eta;
  for (const auto& [j, t] : order) {
    const double old = beta_(j, t);
    const double proposal = old * std::exp(std::sqrt(zeta_(j, t)) * rng_.normal());
    const double r = log_ratio_beta(j, t, proposal);
    if (!std::isfinite(r) && r != kNegInf) {
      throw NumericalError("sampler: non-finite log posterior updating beta(" + std::to_string(j + 1) + ", " +
                           std::to_string(t + 1) + ")");
    }
    if (!accept(r, "beta")) continue;
    window_beta_(j, t) += 1.0;
    if (counting_) total_beta_(j, t) += 1.0;
    const double delta = proposal - old;
    beta_(j, t) = proposal;
    lambda_.col(t) += delta * data_.psi.col(j);
    ll_(t) = poisson_loglik(data_.y.col(t), lambda_.col(t));
    lp_(j, t) = tn_logpdf(proposal, loc_(j, t), sigma2);
    if (!config_.frozen_analog_pool) {
      for (const auto& [s, w] : reverse_[static_cast<std::size_t>(t)]) {
        mu_(j, s) += w * delta;
        loc_(j, s) = process_location(mu_(j, s), sigma2);
        lp_(j, s) = tn_logpdf(beta_(j, s), loc_(j, s), sigma2);
      }
    }
  }
}

inline void AnalogSampler::step_m() {
  std::vector<int> grid;
  for (int m = config_.hyper.m_min; m <= config_.hyper.m_max; ++m) grid.push_back(m);
  grid_step(grid, [](ModelParams& p, int v) { p.m = v; });
}

inline void AnalogSampler::step_q() {
  std::vector<int> grid;
  for (int q = config_.hyper.q_min; q <= config_.hyper.q_max; ++q) grid.push_back(q);
  grid_step(grid, [](ModelParams& p, int v) { p.q = v; });
}

inline void AnalogSampler::step_knn() {
  grid_step(config_.hyper.knn_grid, [](ModelParams& p, int v) { p.k_nn = v; });
}

inline void AnalogSampler::step_theta1() {
  const auto& h = config_.hyper;
  ModelParams prop = params_;
  prop.theta1 = params_.theta1 * std::exp(std::sqrt(theta1_var_) * rng_.normal());
  ProcessEval ev = evaluate_process(prop, beta_);
  double r = inv_gamma_logpdf(prop.theta1, h.a1, h.b1) - inv_gamma_logpdf(params_.theta1, h.a1, h.b1);
  if (config_.hyper_uses_process) r += ev.total - lp_.sum();
  if (config_.jacobian) r += std::log(prop.theta1) - std::log(params_.theta1);
  if (!accept(r, "theta1")) return;
  window_theta1_ += 1.0;
  if (counting_) total_theta1_ += 1.0;
  params_ = prop;
  adopt(std::move(ev));
}

inline void AnalogSampler::step_sigma2() {
  const auto& h = config_.hyper;
  ModelParams prop = params_;
  prop.sigma2_eta = params_.sigma2_eta * std::exp(std::sqrt(sigma2_var_) * rng_.normal());
  ProcessEval ev;
  ev.weights = weights_;
  ev.mu = mu_;
  process_densities(ev, prop.sigma2_eta, beta_);
  double r = inv_gamma_logpdf(prop.sigma2_eta, h.a2, h.b2) - inv_gamma_logpdf(params_.sigma2_eta, h.a2, h.b2);
  if (config_.hyper_uses_process) r += ev.total - lp_.sum();
  if (config_.jacobian) r += std::log(prop.sigma2_eta) - std::log(params_.sigma2_eta);
  if (!accept(r, "sigma2")) return;
  window_sigma2_ += 1.0;
  if (counting_) total_sigma2_ += 1.0;
  params_ = prop;
  adopt(std::move(ev));
}

inline ChainOutput AnalogSampler::run() {
  if (config_.iterations < 0 || config_.burn_in < 0 || config_.burn_in > config_.iterations || config_.thin < 1)
    throw InvalidArgument("sampler: need 0 <= burn_in <= iterations and thin >= 1");
  ChainOutput out;
  out.training = data_.training;
  out.iterations = config_.iterations;
  out.burn_in = config_.burn_in;
  out.thin = config_.thin;
  window_beta_ = Eigen::MatrixXd::Zero(n_beta_, n_);
  total_beta_ = Eigen::MatrixXd::Zero(n_beta_, n_);
  const bool keep_any = config_.iterations > config_.burn_in;
  int window = 0;
  int counted = 0;
  for (int it = 0; it < config_.iterations; ++it) {
    counting_ = !keep_any || it >= config_.burn_in;
    try {
      iterate();
    } catch (const Error& e) {
      throw NumericalError("iteration " + std::to_string(it + 1) + ": " + e.what());
    }
    if (counting_) ++counted;
    out.log_posterior_trace.push_back(log_posterior());
    out.param_trace.push_back(params_);
    if (it < config_.burn_in && config_.adapt && ++window == config_.adapt_interval) {
      adapt_proposals(window);
      window = 0;
    }
    if (it >= config_.burn_in && (it - config_.burn_in) % config_.thin == 0) {
      out.beta_draws.push_back(beta_);
      out.param_draws.push_back(params_);
    }
  }
  const double denom = std::max(counted, 1);
  out.acceptance.beta_by_entry = total_beta_ / denom;
  out.acceptance.beta = out.acceptance.beta_by_entry.size() ? out.acceptance.beta_by_entry.mean() : 0.0;
  out.acceptance.theta1 = total_theta1_ / denom;
  out.acceptance.sigma2 = total_sigma2_ / denom;
  out.beta_proposal_var = zeta_;
  out.theta1_proposal_var = theta1_var_;
  out.sigma2_proposal_var = sigma2_var_;
  return out;
}

}  // namespace hba

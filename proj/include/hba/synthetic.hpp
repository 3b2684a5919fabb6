#pragma once

// Synthetic count/forcing pairs with known structure.
//
// planted-analog-cycle: response periods follow a phase schedule t mod P.
// The forcing block of period t (the ppr forcing steps ending at its anchor)
// holds, counting back from the anchor, a trajectory shared by every period
// (offsets 0..q*-2), a phase-specific vector (offset q*-1) and fresh random
// vectors (offsets >= q*). Embeddings with q < q* are identical for all
// periods, q == q* separates the phases, larger q adds period-specific noise.
//
// lorenz63: a Lorenz-63 trajectory sampled once per forcing step drives
// both the forcing (linear patterns) and the count intensities (softplus
// link of the state at the response stamp).

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hba/error.hpp"
#include "hba/fields.hpp"
#include "hba/rng.hpp"
#include "hba/time.hpp"

namespace hba {

enum class LatentSystem { kLorenz63, kPlantedCycle };

inline std::string to_string(LatentSystem s) { return s == LatentSystem::kLorenz63 ? "lorenz63" : "planted-analog-cycle"; }

inline LatentSystem parse_latent_system(const std::string& s) {
  if (s == "lorenz63" || s == "lorenz") return LatentSystem::kLorenz63;
  if (s == "planted-analog-cycle" || s == "planted") return LatentSystem::kPlantedCycle;
  throw InvalidArgument("unknown latent system '" + s + "'");
}

struct SyntheticSpec {
  LatentSystem system = LatentSystem::kPlantedCycle;
  int n_y = 30;
  int n_x = 20;
  int n_periods = 41;         // response periods, the last one is the usual forecast target
  int n_basis = 4;            // columns of the true response basis
  int tau = 12;
  int periods_per_response = 12;
  int history = 24;           // forcing steps before the first anchor (covers q_max - 1)
  int first_year = 1970;
  int response_month = 5;
  double count_scale = 20.0;  // typical intensity
  double forcing_noise = 0.0;
  std::uint64_t seed = 1;

  // planted-analog-cycle
  int period = 8;
  int planted_q = 7;
  double phase_amplitude = 1.0;
  double noise_amplitude = 3.0;

  // lorenz63
  double dt = 0.05;           // model time per forcing step
  int substeps = 10;
  int spinup = 2000;

  void validate() const {
    if (n_y < 1 || n_x < 1 || n_periods < 1 || n_basis < 1 || tau < 0 || history < 0)
      throw InvalidArgument("synthetic spec: dimensions must be >= 1");
    if (system == LatentSystem::kPlantedCycle) {
      if (period < 1) throw InvalidArgument("synthetic spec: period must be >= 1");
      if (planted_q < 1 || planted_q > periods_per_response)
        throw InvalidArgument("synthetic spec: planted_q must lie in [1, periods_per_response]");
    }
    if (system == LatentSystem::kLorenz63 && (!(dt > 0.0) || substeps < 1))
      throw InvalidArgument("synthetic spec: dt and substeps must be positive");
  }
};

struct SyntheticTruth {
  Eigen::MatrixXd latent;     // latent state per forcing step
  Eigen::MatrixXd patterns;   // n_x x latent dim, orthonormal columns
  Eigen::MatrixXd psi;        // n_y x n_basis
  Eigen::MatrixXd g;          // n_basis x n_periods
  Eigen::MatrixXd intensity;  // n_y x n_periods
  std::vector<int> phase;     // planted cycle only
  std::vector<int> exact_analog;  // most recent earlier same-phase period, -1 if none
  int planted_q = 0;
  // Periods sharing the phase of t (excluding t).
  std::vector<int> analogs_of(int t) const {
    std::vector<int> out;
    for (std::size_t s = 0; s < phase.size(); ++s)
      if (static_cast<int>(s) != t && phase[s] == phase[static_cast<std::size_t>(t)]) out.push_back(static_cast<int>(s));
    return out;
  }
};

struct SyntheticData {
  CountField counts;
  ForcingField forcing;
  SyntheticTruth truth;
};

namespace detail {

inline Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

inline Eigen::MatrixXd orthonormal_patterns(Rng& rng, int n_x, int k) {
  if (k > n_x) throw InvalidArgument("synthetic: latent dimension exceeds n_x");
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(rng, n_x, k));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n_x, k);
}

// Nonnegative basis; each site loads mainly on one column.
inline Eigen::MatrixXd response_basis(Rng& rng, int n_y, int k) {
  Eigen::MatrixXd psi(n_y, k);
  for (int i = 0; i < n_y; ++i) {
    const int main = i % k;
    for (int j = 0; j < k; ++j) psi(i, j) = (j == main ? 0.6 + 0.4 * rng.uniform() : 0.15 * rng.uniform());
  }
  return psi;
}

inline Eigen::Vector3d lorenz_rhs(const Eigen::Vector3d& s) {
  constexpr double sigma = 10.0, rho = 28.0, beta = 8.0 / 3.0;
  return {sigma * (s(1) - s(0)), s(0) * (rho - s(2)) - s(1), s(0) * s(1) - beta * s(2)};
}

inline Eigen::Vector3d rk4(const Eigen::Vector3d& s, double h) {
  const Eigen::Vector3d k1 = lorenz_rhs(s);
  const Eigen::Vector3d k2 = lorenz_rhs(s + 0.5 * h * k1);
  const Eigen::Vector3d k3 = lorenz_rhs(s + 0.5 * h * k2);
  const Eigen::Vector3d k4 = lorenz_rhs(s + h * k3);
  return s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int ppr = spec.periods_per_response;
  const int T = spec.n_periods;

  SyntheticData out;
  CountField& counts = out.counts;
  counts.resolution = Resolution::kYearly;
  const TimeStamp first{spec.first_year, spec.response_month};
  counts.times = regular_stamps(first, Resolution::kYearly, T);
  for (int i = 0; i < spec.n_y; ++i) counts.locations.push_back({std::to_string(i + 1), 0.0, static_cast<double>(i)});

  // Forcing runs monthly from `history` steps before the first anchor through
  // the last response stamp.
  ForcingField& forcing = out.forcing;
  forcing.resolution = Resolution::kMonthly;
  forcing.periods_per_response = ppr;
  const TimeStamp first_anchor = first.plus_months(-spec.tau);
  const TimeStamp start = first_anchor.plus_months(-spec.history);
  const TimeStamp last = counts.times.back();
  const int n_steps = static_cast<int>(last.months() - start.months()) + 1;
  forcing.times = regular_stamps(start, Resolution::kMonthly, n_steps);
  for (int i = 0; i < spec.n_x; ++i) forcing.locations.push_back({std::to_string(i + 1), static_cast<double>(i), 0.0});
  auto anchor_step = [&](int t) { return spec.history + t * 12; };
  auto stamp_step = [&](int t) { return anchor_step(t) + spec.tau; };

  SyntheticTruth& truth = out.truth;
  Eigen::MatrixXd latent;

  if (spec.system == LatentSystem::kPlantedCycle) {
    if (ppr != 12) throw InvalidArgument("synthetic: planted cycle needs monthly forcing with 12 steps per response");
    const int k = spec.n_basis;
    latent = detail::gaussian_matrix(rng, k, n_steps) * spec.noise_amplitude;
    const Eigen::MatrixXd common = detail::gaussian_matrix(rng, k, spec.planted_q);
    const Eigen::MatrixXd phase_vec = detail::gaussian_matrix(rng, k, spec.period) * spec.phase_amplitude;
    truth.planted_q = spec.planted_q;
    for (int t = 0; t < T; ++t) {
      const int ph = t % spec.period;
      truth.phase.push_back(ph);
      truth.exact_analog.push_back(t >= spec.period ? t - spec.period : -1);
      const int a = anchor_step(t);
      for (int o = 0; o < spec.planted_q; ++o) {
        if (a - o < 0) continue;
        latent.col(a - o) = o < spec.planted_q - 1 ? Eigen::VectorXd(common.col(o)) : Eigen::VectorXd(phase_vec.col(ph));
      }
    }
    truth.psi = detail::response_basis(rng, spec.n_y, k);
    Eigen::MatrixXd g_phase(k, spec.period);
    for (int p = 0; p < spec.period; ++p)
      for (int j = 0; j < k; ++j) g_phase(j, p) = 0.2 + 1.8 * rng.uniform();
    truth.g.resize(k, T);
    for (int t = 0; t < T; ++t) truth.g.col(t) = g_phase.col(truth.phase[static_cast<std::size_t>(t)]);
  } else {
    Eigen::Vector3d s(1.0 + rng.normal(), 1.0 + rng.normal(), 20.0 + rng.normal());
    const double h = spec.dt / spec.substeps;
    for (int i = 0; i < spec.spinup; ++i) s = detail::rk4(s, h);
    Eigen::MatrixXd raw(3, n_steps);
    for (int c = 0; c < n_steps; ++c) {
      raw.col(c) = s;
      for (int i = 0; i < spec.substeps; ++i) s = detail::rk4(s, h);
    }
    // Rough standardization over the attractor.
    latent.resize(3, n_steps);
    latent.row(0) = raw.row(0) / 8.0;
    latent.row(1) = raw.row(1) / 9.0;
    latent.row(2) = (raw.row(2).array() - 23.5).matrix() / 8.0;
    const int k = spec.n_basis;
    truth.psi = detail::response_basis(rng, spec.n_y, k);
    // Loadings of each basis coefficient on the standardized state.
    Eigen::MatrixXd load(k, 3);
    for (int j = 0; j < k; ++j) {
      const double angle = 2.0 * 3.14159265358979323846 * j / k;
      load.row(j) << 2.5 * std::cos(angle), 1.0 * std::sin(angle), 1.5 * std::sin(angle + 1.0);
    }
    truth.g.resize(k, T);
    for (int t = 0; t < T; ++t) {
      const Eigen::VectorXd z = load * latent.col(stamp_step(t));
      for (int j = 0; j < k; ++j) truth.g(j, t) = detail::softplus(z(j) - 0.5);
    }
  }

  truth.latent = latent;
  truth.patterns = detail::orthonormal_patterns(rng, spec.n_x, static_cast<int>(latent.rows()));
  forcing.values = truth.patterns * latent;
  if (spec.forcing_noise > 0.0) forcing.values += detail::gaussian_matrix(rng, spec.n_x, n_steps) * spec.forcing_noise;

  // Mean intensity of about count_scale per site.
  const Eigen::MatrixXd raw_int = truth.psi * truth.g;
  const double scale = spec.count_scale / std::max(raw_int.mean(), 1e-12);
  truth.psi *= scale;
  truth.intensity = truth.psi * truth.g;
  counts.counts.resize(spec.n_y, T);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < spec.n_y; ++i) counts.counts(i, t) = rng.poisson(truth.intensity(i, t));

  counts.validate();
  forcing.validate();
  return out;
}

}  // namespace hba

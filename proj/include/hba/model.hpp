#pragma once

// In-memory orchestration: anomalies -> NMF -> forcing reduction -> distance
// cache -> chains -> forecast for one target period.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hba/analog.hpp"
#include "hba/anomaly.hpp"
#include "hba/dimred.hpp"
#include "hba/error.hpp"
#include "hba/evaluate.hpp"
#include "hba/fields.hpp"
#include "hba/forecast.hpp"
#include "hba/nmf.hpp"
#include "hba/sampler.hpp"

namespace hba {

enum class TrainingMode {
  kBefore,   // only periods before the target
  kExclude,  // every period except the held-out ones
};

inline std::string to_string(TrainingMode m) { return m == TrainingMode::kBefore ? "before" : "exclude"; }

inline TrainingMode parse_training_mode(const std::string& s) {
  if (s == "before") return TrainingMode::kBefore;
  if (s == "exclude") return TrainingMode::kExclude;
  throw InvalidArgument("unknown training mode '" + s + "' (expected before or exclude)");
}

struct ModelSettings {
  DimredMethod method = DimredMethod::kEof;
  int n_beta = 14;
  int n_alpha = 16;
  Hyperparams hyper;
  AlignmentSpec alignment;
  std::optional<TimeStamp> ref_start;
  std::optional<TimeStamp> ref_end;
  NmfOptions nmf;
  TrainingMode training_mode = TrainingMode::kBefore;
  ProcrustesOptions procrustes;
  unsigned threads = 0;
};

// Error raised by a named pipeline stage.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what) : Error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// Rescales Psi to unit-norm columns (B absorbs the scale); Psi B unchanged.
inline void normalize_basis(Factorization& f) {
  for (Eigen::Index j = 0; j < f.psi.cols(); ++j) {
    const double n = f.psi.col(j).norm();
    if (n > 0.0) {
      f.psi.col(j) /= n;
      f.b.row(j) *= n;
    }
  }
}

struct PreparedModel {
  int target = 0;
  std::vector<int> training;
  std::vector<int> excluded;
  TimeAlignment alignment;
  ForcingField anomalies;                        // through the target's anchor
  Factorization factorization;                   // over the training columns
  std::map<int, ForcingCoefficients> coefficients;  // keyed by k_nn (0 for EOF)
  std::map<int, std::string> le_failures;        // grid entries that could not be embedded
  DistanceCache cache;
  Hyperparams hyper;                             // knn grid restricted to usable entries
};

// Training periods for a target: aligned, with q_max - 1 steps of history,
// not held out, and (in before mode) earlier than the target.
inline std::vector<int> select_training(const TimeAlignment& alignment, int target, int q_max,
                                        const std::vector<int>& excluded, TrainingMode mode, int n_periods) {
  std::vector<int> out;
  for (int t = 0; t < std::min(alignment.size(), n_periods); ++t) {
    if (t == target) continue;
    if (mode == TrainingMode::kBefore && t > target) continue;
    if (std::find(excluded.begin(), excluded.end(), t) != excluded.end()) continue;
    if (alignment(t) - (q_max - 1) < 0) continue;
    out.push_back(t);
  }
  return out;
}

inline PreparedModel prepare_model(const CountField& counts, const ForcingField& forcing, int target,
                                   const ModelSettings& s, std::vector<int> excluded = {}) {
  PreparedModel pm;
  pm.target = target;
  pm.hyper = s.hyper;
  run_stage("config", [&] {
    s.hyper.validate();
    counts.validate();
    forcing.validate();
    return 0;
  });
  const int anchor = run_stage("align", [&] { return align(target, s.alignment, counts, forcing); });
  if (anchor - (s.hyper.q_max - 1) < 0)
    throw StageError("align", "not enough forcing history for the target at q_max=" + std::to_string(s.hyper.q_max));

  pm.anomalies = run_stage("anomalize", [&] {
    ForcingField past = forcing;
    past.values = past.values.leftCols(anchor + 1).eval();
    past.times.resize(static_cast<std::size_t>(anchor + 1));
    std::optional<TimeStamp> ref_end = s.ref_end;
    if (ref_end && past.times.back() < *ref_end) ref_end = past.times.back();
    return anomalize(past, s.ref_start, ref_end);
  });
  pm.alignment = run_stage("align", [&] { return align_all(s.alignment, counts, pm.anomalies, target + 1); });
  if (pm.alignment.size() <= target) throw StageError("align", "target period not aligned");

  excluded.erase(std::remove(excluded.begin(), excluded.end(), target), excluded.end());
  pm.excluded = excluded;
  pm.training =
      select_training(pm.alignment, target, s.hyper.q_max, excluded, s.training_mode, counts.n_periods());
  if (static_cast<int>(pm.training.size()) < s.hyper.m_max + 1) {
    throw StageError("align", std::to_string(pm.training.size()) + " training periods cannot support m_max=" +
                                  std::to_string(s.hyper.m_max));
  }

  pm.factorization = run_stage("nmf", [&] {
    Eigen::MatrixXd y(counts.n_locations(), static_cast<Eigen::Index>(pm.training.size()));
    for (std::size_t i = 0; i < pm.training.size(); ++i)
      y.col(static_cast<Eigen::Index>(i)) = counts.counts.col(pm.training[i]).cast<double>();
    Factorization f = fit_offset_nmf(y, s.n_beta, nnsvd_init(y, s.n_beta), s.nmf);
    normalize_basis(f);
    return f;
  });

  run_stage("dimred", [&] {
    if (s.method == DimredMethod::kEof) {
      pm.coefficients.emplace(0, compute_eofs(pm.anomalies.values, s.n_alpha).coeffs);
      pm.hyper.knn_grid.clear();
    } else {
      std::vector<int> grid = s.hyper.knn_grid.empty() ? default_knn_grid() : s.hyper.knn_grid;
      auto entries = precompute_le_grid(pm.anomalies.values, s.n_alpha, grid);
      pm.hyper.knn_grid.clear();
      for (auto& [k, e] : entries) {
        if (e.coeffs) {
          pm.coefficients.emplace(k, *e.coeffs);
          pm.hyper.knn_grid.push_back(k);
        } else {
          pm.le_failures.emplace(k, e.error);
        }
      }
      if (pm.coefficients.empty()) throw InvalidArgument("no usable k_nn grid entry: " + entries.begin()->second.error);
    }
    return 0;
  });

  pm.cache = run_stage("cache", [&] {
    std::vector<int> idx = pm.training;
    idx.push_back(target);
    return build_distance_cache(pm.coefficients, pm.alignment, s.hyper.q_min, s.hyper.q_max, idx, s.procrustes,
                                s.threads);
  });
  return pm;
}

inline SamplerData sampler_data(const CountField& counts, const PreparedModel& pm) {
  SamplerData d;
  d.training = pm.training;
  d.y.resize(counts.n_locations(), static_cast<Eigen::Index>(pm.training.size()));
  for (std::size_t i = 0; i < pm.training.size(); ++i) d.y.col(static_cast<Eigen::Index>(i)) = counts.counts.col(pm.training[i]);
  d.psi = pm.factorization.psi;
  d.offset = pm.factorization.offset;
  d.beta_start = pm.factorization.b;
  return d;
}

// Runs `chains` chains concurrently with seeds seed, seed + 1, ...
inline std::vector<ChainOutput> run_chains(const CountField& counts, const PreparedModel& pm, SamplerConfig config,
                                           std::uint64_t seed, int chains) {
  if (chains < 1) throw StageError("sampler", "need at least one chain");
  config.hyper = pm.hyper;
  std::vector<ChainOutput> out(static_cast<std::size_t>(chains));
  std::vector<std::string> errors(static_cast<std::size_t>(chains));
  auto one = [&](int c) {
    try {
      AnalogSampler s(sampler_data(counts, pm), pm.cache, config, seed + static_cast<std::uint64_t>(c));
      out[static_cast<std::size_t>(c)] = s.run();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(c)] = "chain " + std::to_string(c + 1) + ": " + e.what();
    }
  };
  if (chains == 1) {
    one(0);
  } else {
    std::vector<std::thread> pool;
    for (int c = 0; c < chains; ++c) pool.emplace_back(one, c);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw StageError("sampler", e);
  return out;
}

}  // namespace hba

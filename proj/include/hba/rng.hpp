#pragma once

#include <cstdint>
#include <random>

namespace hba {

// Seeded generator owned by a single chain. Distributions are constructed
// per call so the draw sequence depends only on the seed and call order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }
  std::int64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<std::int64_t>(mean)(engine_);
  }
  double gamma(double shape, double scale) { return std::gamma_distribution<double>(shape, scale)(engine_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hba

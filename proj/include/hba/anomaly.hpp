#pragma once

#include <optional>
#include <vector>

#include "hba/error.hpp"
#include "hba/fields.hpp"

namespace hba {

// Number of forcing steps in one seasonal cycle.
inline int seasonal_period(Resolution r) { return r == Resolution::kMonthly ? 12 : 1; }

// Subtracts location-specific climatological means, one per position in the
// seasonal cycle (month of year for monthly data), computed over the
// reference window [ref_start, ref_end].
inline ForcingField anomalize(const ForcingField& f, const TimeStamp& ref_start, const TimeStamp& ref_end) {
  long first = f.index_of(ref_start);
  long last = f.index_of(ref_end);
  if (first < 0 || last < 0) {
    throw InvalidArgument("anomalize: reference window " + format_stamp(ref_start) + ".." + format_stamp(ref_end) +
                          " outside the forcing record " + format_stamp(f.times.front()) + ".." +
                          format_stamp(f.times.back()));
  }
  const int period = seasonal_period(f.resolution);
  if (last - first + 1 < period) {
    throw InvalidArgument("anomalize: reference window shorter than one seasonal cycle");
  }
  const Eigen::Index n = f.values.rows();
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(n, period);
  std::vector<int> counts(static_cast<std::size_t>(period), 0);
  auto phase = [&](long j) { return static_cast<int>(f.times[static_cast<std::size_t>(j)].months() % period); };
  for (long j = first; j <= last; ++j) {
    means.col(phase(j)) += f.values.col(j);
    ++counts[static_cast<std::size_t>(phase(j))];
  }
  for (int p = 0; p < period; ++p) means.col(p) /= counts[static_cast<std::size_t>(p)];

  ForcingField out = f;
  for (Eigen::Index j = 0; j < f.values.cols(); ++j) out.values.col(j) -= means.col(phase(j));
  return out;
}

// Reference window defaults to the full record.
inline ForcingField anomalize(const ForcingField& f, std::optional<TimeStamp> ref_start = std::nullopt,
                              std::optional<TimeStamp> ref_end = std::nullopt) {
  return anomalize(f, ref_start.value_or(f.times.front()), ref_end.value_or(f.times.back()));
}

}  // namespace hba

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hba/error.hpp"
#include "hba/time.hpp"

namespace hba {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using CountVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

struct Location {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;

  friend bool operator==(const Location&, const Location&) = default;
};

// Evenly spaced stamps starting at `first`.
inline std::vector<TimeStamp> regular_stamps(TimeStamp first, Resolution res, int n) {
  std::vector<TimeStamp> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(first.plus_months(static_cast<long>(i) * step_months(res)));
  return out;
}

namespace detail {
inline void check_stamps(const std::vector<TimeStamp>& times, Resolution res, const char* what) {
  for (std::size_t i = 1; i < times.size(); ++i) {
    long gap = times[i].months() - times[i - 1].months();
    if (gap != step_months(res)) {
      throw InvalidArgument(std::string(what) + ": time stamps not evenly spaced; expected " +
                            format_stamp(times[i - 1].plus_months(step_months(res))) + " after " +
                            format_stamp(times[i - 1]) + " but found " + format_stamp(times[i]));
    }
  }
}
}  // namespace detail

// Response matrix Y: one row per location, one column per response period.
struct CountField {
  CountMatrix counts;
  std::vector<Location> locations;
  Resolution resolution = Resolution::kYearly;
  std::vector<TimeStamp> times;

  int n_locations() const { return static_cast<int>(counts.rows()); }
  int n_periods() const { return static_cast<int>(counts.cols()); }

  // Stamp of response index t; t may run past the record (forecast targets).
  TimeStamp stamp(int t) const { return times.front().plus_months(static_cast<long>(t) * step_months(resolution)); }

  // Index of the period with the given year, or -1.
  int index_of_year(int year) const {
    for (int t = 0; t < n_periods(); ++t)
      if (times[static_cast<std::size_t>(t)].year == year) return t;
    return -1;
  }

  void validate() const {
    if (counts.rows() < 1 || counts.cols() < 1) throw InvalidArgument("count field must be at least 1x1");
    if (static_cast<Eigen::Index>(locations.size()) != counts.rows())
      throw InvalidArgument("count field: location count does not match rows");
    if (static_cast<Eigen::Index>(times.size()) != counts.cols())
      throw InvalidArgument("count field: stamp count does not match columns");
    for (Eigen::Index j = 0; j < counts.cols(); ++j)
      for (Eigen::Index i = 0; i < counts.rows(); ++i)
        if (counts(i, j) < 0)
          throw InvalidArgument("count field: negative count at row " + std::to_string(i + 1) + ", column " +
                                std::to_string(j + 1));
    detail::check_stamps(times, resolution, "count field");
  }
};

// Forcing matrix x: one row per forcing location, one column per forcing step.
struct ForcingField {
  Eigen::MatrixXd values;
  std::vector<Location> locations;
  Resolution resolution = Resolution::kMonthly;
  std::vector<TimeStamp> times;
  int periods_per_response = 12;

  int n_locations() const { return static_cast<int>(values.rows()); }
  int n_periods() const { return static_cast<int>(values.cols()); }

  // Column holding the given stamp, or -1 when outside the record.
  long index_of(const TimeStamp& ts) const {
    long k = (ts.months() - times.front().months());
    if (k % step_months(resolution) != 0) return -1;
    k /= step_months(resolution);
    return (k >= 0 && k < n_periods()) ? k : -1;
  }

  void validate() const {
    if (values.rows() < 1 || values.cols() < 1) throw InvalidArgument("forcing field must be at least 1x1");
    if (static_cast<Eigen::Index>(locations.size()) != values.rows())
      throw InvalidArgument("forcing field: location count does not match rows");
    if (static_cast<Eigen::Index>(times.size()) != values.cols())
      throw InvalidArgument("forcing field: stamp count does not match columns");
    if (periods_per_response < 1) throw InvalidArgument("forcing field: periods_per_response must be >= 1");
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      for (Eigen::Index i = 0; i < values.rows(); ++i)
        if (!std::isfinite(values(i, j)))
          throw InvalidArgument("forcing field: missing value at row " + std::to_string(i + 1) + ", column " +
                                std::to_string(j + 1) + " (" + format_stamp(times[static_cast<std::size_t>(j)]) +
                                ")");
    detail::check_stamps(times, resolution, "forcing field");
  }
};

enum class Anchor {
  // t' is the forcing step lying tau forcing periods before the response
  // stamp of t (a May-2014 target with tau = 12 anchors at May 2013).
  kCalendar,
  // t' = index_offset + t * periods_per_response - tau, ignoring stamps.
  kIndexOffset,
};

struct AlignmentSpec {
  int tau = 12;
  Anchor anchor = Anchor::kCalendar;
  int index_offset = 0;
};

// Maps response index t (0-based; t == n_periods is the first forecast
// target) to forcing index t' (0-based).
inline int align(int t, const AlignmentSpec& spec, const CountField& counts, const ForcingField& forcing) {
  if (t < 0) throw InvalidArgument("align: negative response index");
  if (spec.tau < 0) throw InvalidArgument("align: tau must be nonnegative");
  long idx = 0;
  if (spec.anchor == Anchor::kCalendar) {
    TimeStamp target = counts.stamp(t);
    TimeStamp anchor = target.plus_months(-static_cast<long>(spec.tau) * step_months(forcing.resolution));
    long k = anchor.months() - forcing.times.front().months();
    if (k < 0) {
      throw InsufficientHistory("align: forcing record starts at " + format_stamp(forcing.times.front()) +
                                ", after the anchor " + format_stamp(anchor) + " of response period " +
                                format_stamp(target));
    }
    if (k % step_months(forcing.resolution) != 0)
      throw InvalidArgument("align: anchor stamp falls between forcing steps");
    idx = k / step_months(forcing.resolution);
  } else {
    idx = static_cast<long>(spec.index_offset) + static_cast<long>(t) * forcing.periods_per_response - spec.tau;
    if (idx < 0) throw InsufficientHistory("align: forcing index before start of record for t=" + std::to_string(t));
  }
  if (idx >= forcing.n_periods()) {
    throw InsufficientHistory("align: forcing record ends at " + format_stamp(forcing.times.back()) +
                              ", before the anchor for response index " + std::to_string(t));
  }
  return static_cast<int>(idx);
}

// Precomputed t -> t' table for t in [0, n_targets).
struct TimeAlignment {
  std::vector<int> forcing_index;

  int operator()(int t) const {
    if (t < 0 || t >= static_cast<int>(forcing_index.size()))
      throw InvalidArgument("alignment: response index " + std::to_string(t) + " not covered");
    return forcing_index[static_cast<std::size_t>(t)];
  }
  int size() const { return static_cast<int>(forcing_index.size()); }
};

// Aligns every response index that has forcing available, stopping at the
// first index whose anchor lies past the forcing record.
inline TimeAlignment align_all(const AlignmentSpec& spec, const CountField& counts, const ForcingField& forcing,
                               int max_targets) {
  TimeAlignment out;
  for (int t = 0; t < max_targets; ++t) {
    try {
      out.forcing_index.push_back(align(t, spec, counts, forcing));
    } catch (const InsufficientHistory&) {
      if (t == 0) throw;
      break;
    }
  }
  return out;
}

}  // namespace hba

#pragma once

#include <charconv>
#include <compare>
#include <string>
#include <string_view>

#include "hba/error.hpp"

namespace hba {

enum class Resolution { kYearly, kMonthly };

inline std::string to_string(Resolution r) { return r == Resolution::kYearly ? "yearly" : "monthly"; }

inline Resolution parse_resolution(std::string_view s) {
  if (s == "yearly" || s == "annual" || s == "year") return Resolution::kYearly;
  if (s == "monthly" || s == "month") return Resolution::kMonthly;
  throw ParseError("unknown time resolution '" + std::string(s) + "'");
}

// Calendar stamp with month granularity. Yearly records keep the month of
// observation (e.g. May surveys), which the calendar alignment rule needs.
struct TimeStamp {
  int year = 0;
  int month = 1;  // 1..12

  // Months since year 0.
  constexpr long months() const { return static_cast<long>(year) * 12 + (month - 1); }

  static constexpr TimeStamp from_months(long m) {
    long y = m >= 0 ? m / 12 : -((-m + 11) / 12);
    return TimeStamp{static_cast<int>(y), static_cast<int>(m - y * 12) + 1};
  }

  constexpr TimeStamp plus_months(long k) const { return from_months(months() + k); }

  friend constexpr auto operator<=>(const TimeStamp&, const TimeStamp&) = default;
};

// Size of one step of the given resolution, in months.
constexpr int step_months(Resolution r) { return r == Resolution::kYearly ? 12 : 1; }

// Accepts "YYYY" (month defaults to 1) and "YYYY-MM".
inline TimeStamp parse_stamp(std::string_view s) {
  TimeStamp ts;
  auto dash = s.find('-', 1);
  auto ys = s.substr(0, dash);
  auto [p, ec] = std::from_chars(ys.data(), ys.data() + ys.size(), ts.year);
  if (ec != std::errc() || p != ys.data() + ys.size()) {
    throw ParseError("bad time stamp '" + std::string(s) + "'");
  }
  if (dash != std::string_view::npos) {
    auto ms = s.substr(dash + 1);
    auto [q, ec2] = std::from_chars(ms.data(), ms.data() + ms.size(), ts.month);
    if (ec2 != std::errc() || q != ms.data() + ms.size() || ts.month < 1 || ts.month > 12) {
      throw ParseError("bad month in time stamp '" + std::string(s) + "'");
    }
  }
  return ts;
}

inline std::string format_stamp(const TimeStamp& ts) {
  std::string m = std::to_string(ts.month);
  if (m.size() < 2) m = "0" + m;
  return std::to_string(ts.year) + "-" + m;
}

}  // namespace hba

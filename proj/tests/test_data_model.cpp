#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "hba/anomaly.hpp"
#include "hba/fields.hpp"
#include "hba/io.hpp"
#include "hba/time.hpp"

using namespace hba;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "hba_test_data_model";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

ForcingField monthly_field(const Eigen::MatrixXd& v, TimeStamp first) {
  ForcingField f;
  f.values = v;
  f.resolution = Resolution::kMonthly;
  f.times = regular_stamps(first, Resolution::kMonthly, static_cast<int>(v.cols()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) f.locations.push_back({std::to_string(i + 1), 0.0, 0.0});
  return f;
}

CountField yearly_counts(int n_y, int first_year, int n, int month = 5) {
  CountField c;
  c.counts = CountMatrix::Zero(n_y, n);
  c.resolution = Resolution::kYearly;
  c.times = regular_stamps({first_year, month}, Resolution::kYearly, n);
  for (int i = 0; i < n_y; ++i) c.locations.push_back({std::to_string(i + 1), 0.0, 0.0});
  return c;
}

}  // namespace

TEST(Time, StampArithmetic) {
  TimeStamp t{2013, 5};
  EXPECT_EQ(t.plus_months(12), (TimeStamp{2014, 5}));
  EXPECT_EQ(t.plus_months(-5), (TimeStamp{2012, 12}));
  EXPECT_EQ(parse_stamp("1999-03"), (TimeStamp{1999, 3}));
  EXPECT_EQ(parse_stamp("1999"), (TimeStamp{1999, 1}));
  EXPECT_EQ(format_stamp({1970, 5}), "1970-05");
  EXPECT_THROW(parse_stamp("1999-13"), ParseError);
}

TEST(LoadCountField, ZeroMatrix) {
  auto p = scratch("zeros.txt");
  write_text(p, "3 2 yearly 1970\n0 0\n0 0\n0 0\n");
  CountField c = load_count_field(p);
  EXPECT_EQ(c.n_locations(), 3);
  EXPECT_EQ(c.n_periods(), 2);
  EXPECT_TRUE((c.counts.array() == 0).all());
}

TEST(LoadCountField, NegativeCellNamed) {
  auto p = scratch("neg.txt");
  write_text(p, "2 2 yearly 1970\n0 1\n2 -1\n");
  try {
    load_count_field(p);
    FAIL() << "expected rejection";
  } catch (const InvalidArgument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 2"), std::string::npos) << msg;
  }
}

TEST(LoadCountField, NonIntegerAndRagged) {
  auto p = scratch("frac.txt");
  write_text(p, "1 2 yearly 1970\n1.5 2\n");
  EXPECT_THROW(load_count_field(p), InvalidArgument);
  auto r = scratch("ragged.txt");
  write_text(r, "2 2 yearly 1970\n1 2\n3\n");
  EXPECT_THROW(load_count_field(r), ParseError);
}

TEST(LoadCountField, StudyDimensions) {
  auto p = scratch("big.txt");
  {
    std::ofstream out(p);
    out << "1067 45 yearly 1970-05\n";
    for (int i = 0; i < 1067; ++i) {
      for (int j = 0; j < 45; ++j) out << (i + j) % 7 << (j + 1 < 45 ? " " : "\n");
    }
  }
  CountField c = load_count_field(p);
  EXPECT_EQ(c.n_locations(), 1067);
  EXPECT_EQ(c.n_periods(), 45);
  EXPECT_EQ(c.times.back(), (TimeStamp{2014, 5}));
}

TEST(LoadCountField, RoundTrip) {
  CountField c = yearly_counts(4, 1980, 6);
  std::mt19937 gen(3);
  for (Eigen::Index j = 0; j < c.counts.cols(); ++j)
    for (Eigen::Index i = 0; i < c.counts.rows(); ++i) c.counts(i, j) = gen() % 50;
  c.locations[2] = {"site-c", -101.25, 47.5};
  auto p = scratch("rt_counts.txt");
  write_count_field(p, c);
  CountField back = load_count_field(p);
  EXPECT_EQ(back.counts, c.counts);
  EXPECT_EQ(back.times, c.times);
  EXPECT_EQ(back.locations, c.locations);
  EXPECT_EQ(back.resolution, c.resolution);
}

TEST(LoadForcingField, ConstantAndDimensions) {
  auto p = scratch("const.txt");
  {
    std::ofstream out(p);
    out << "2 24 monthly 2000-01\n";
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 24; ++j) out << "1.25" << (j + 1 < 24 ? "," : "\n");
    }
  }
  ForcingField f = load_forcing_field(p);
  EXPECT_EQ(f.values.rows(), 2);
  EXPECT_EQ(f.values.cols(), 24);
  EXPECT_TRUE((f.values.array() == 1.25).all());

  auto big = scratch("sst.txt");
  {
    std::ofstream out(big);
    out << "3132 540 monthly 1970-01\n";
    for (int i = 0; i < 3132; ++i) {
      for (int j = 0; j < 540; ++j) out << "0.5" << (j + 1 < 540 ? " " : "\n");
    }
  }
  ForcingField g = load_forcing_field(big);
  EXPECT_EQ(g.values.rows(), 3132);
  EXPECT_EQ(g.values.cols(), 540);
}

TEST(LoadForcingField, MissingMonthNamed) {
  auto p = scratch("gap.txt");
  write_text(p, "1 3 monthly 2000-01\ntime 2000-01 2000-02 2000-04\n1 2 3\n");
  try {
    load_forcing_field(p);
    FAIL() << "expected gap error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("2000-03"), std::string::npos) << e.what();
  }
}

TEST(LoadForcingField, NaNRejected) {
  auto p = scratch("nan.txt");
  write_text(p, "1 3 monthly 2000-01\n1 NaN 3\n");
  try {
    load_forcing_field(p);
    FAIL() << "expected NaN error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("2000-02"), std::string::npos) << e.what();
  }
}

TEST(LoadForcingField, RoundTrip) {
  Eigen::MatrixXd v = Eigen::MatrixXd::Random(3, 14);
  v(0, 0) = 1.0 / 3.0;
  ForcingField f = monthly_field(v, {1999, 11});
  auto p = scratch("rt_forcing.txt");
  write_forcing_field(p, f);
  ForcingField back = load_forcing_field(p);
  EXPECT_EQ(back.values, f.values);
  EXPECT_EQ(back.times, f.times);
}

TEST(Anomalize, ConstantFieldIsZero) {
  ForcingField f = monthly_field(Eigen::MatrixXd::Constant(2, 36, 4.5), {2000, 1});
  ForcingField a = anomalize(f, TimeStamp{2000, 1}, TimeStamp{2001, 12});
  EXPECT_LT(a.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Anomalize, PureClimatologyRemoved) {
  Eigen::MatrixXd v(1, 48);
  for (int j = 0; j < 48; ++j) v(0, j) = (j % 12) + 1;
  ForcingField a = anomalize(monthly_field(v, {2000, 1}));
  EXPECT_LT(a.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Anomalize, TrendMatchesBruteForce) {
  Eigen::MatrixXd v(2, 48);
  for (int j = 0; j < 48; ++j) {
    v(0, j) = 0.5 * j;
    v(1, j) = -2.0 + 0.1 * j + (j % 12 == 3 ? 1.0 : 0.0);
  }
  ForcingField f = monthly_field(v, {2000, 1});
  ForcingField a = anomalize(f, TimeStamp{2000, 1}, TimeStamp{2002, 12});
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 48; ++j) {
      double sum = 0;
      int n = 0;
      for (int k = 0; k < 36; ++k) {
        if (k % 12 == j % 12) {
          sum += v(i, k);
          ++n;
        }
      }
      EXPECT_NEAR(a.values(i, j), v(i, j) - sum / n, 1e-12);
    }
  }
  // Reference-window monthly means of the output vanish.
  for (int i = 0; i < 2; ++i) {
    for (int m = 0; m < 12; ++m) {
      double s = 0;
      for (int y = 0; y < 3; ++y) s += a.values(i, 12 * y + m);
      EXPECT_NEAR(s / 3, 0.0, 1e-10);
    }
  }
}

TEST(Anomalize, IdempotentOnFullWindow) {
  ForcingField f = monthly_field(Eigen::MatrixXd::Random(3, 60), {1990, 4});
  ForcingField a = anomalize(f);
  ForcingField b = anomalize(a);
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Anomalize, WindowErrors) {
  ForcingField f = monthly_field(Eigen::MatrixXd::Random(1, 24), {2000, 1});
  EXPECT_THROW(anomalize(f, TimeStamp{1999, 1}, TimeStamp{2000, 12}), Error);
  EXPECT_THROW(anomalize(f, TimeStamp{2000, 1}, TimeStamp{2000, 6}), Error);
}

TEST(Align, ZeroLeadCoincident) {
  CountField c;
  c.counts = CountMatrix::Zero(1, 12);
  c.resolution = Resolution::kMonthly;
  c.times = regular_stamps({2000, 1}, Resolution::kMonthly, 12);
  c.locations = {{"1", 0, 0}};
  ForcingField f = monthly_field(Eigen::MatrixXd::Zero(1, 24), {1999, 7});
  AlignmentSpec spec;
  spec.tau = 0;
  for (int t = 0; t < 12; ++t) EXPECT_EQ(f.times[static_cast<std::size_t>(align(t, spec, c, f))], c.times[static_cast<std::size_t>(t)]);
}

TEST(Align, MayCountsOneYearLead) {
  CountField c = yearly_counts(1, 1970, 45);
  ForcingField f = monthly_field(Eigen::MatrixXd::Zero(1, 540), {1969, 1});
  AlignmentSpec spec;  // tau = 12, calendar anchor
  const int t = c.index_of_year(2014);
  const int tp = align(t, spec, c, f);
  EXPECT_EQ(f.times[static_cast<std::size_t>(tp)], (TimeStamp{2013, 5}));
  // Monotone in t.
  int prev = -1;
  for (int s = 0; s < 45; ++s) {
    const int cur = align(s, spec, c, f);
    EXPECT_GT(cur, prev);
    prev = cur;
  }
}

TEST(Align, InsufficientHistory) {
  CountField c = yearly_counts(1, 1970, 3);
  ForcingField f = monthly_field(Eigen::MatrixXd::Zero(1, 48), {1969, 9});
  AlignmentSpec spec;
  spec.tau = 24;
  EXPECT_THROW(align(0, spec, c, f), InsufficientHistory);
}

TEST(Align, IndexOffsetAnchor) {
  CountField c = yearly_counts(1, 1970, 3);
  ForcingField f = monthly_field(Eigen::MatrixXd::Zero(1, 60), {1969, 1});
  AlignmentSpec spec;
  spec.anchor = Anchor::kIndexOffset;
  spec.tau = 12;
  spec.index_offset = 16;
  EXPECT_EQ(align(0, spec, c, f), 4);
  EXPECT_EQ(align(2, spec, c, f), 28);
}

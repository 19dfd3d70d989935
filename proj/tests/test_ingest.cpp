#include <gtest/gtest.h>

#include "epca/ingest.hpp"
#include "epca/rng.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace epca;

namespace {

DataMatrix parse(const std::string& text, const IngestConfig& cfg = {}) {
  std::istringstream in(text);
  return parse_panel(in, cfg);
}

ErrorKind kind_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error for:\n" << text;
  return ErrorKind::numerical;
}

}  // namespace

TEST(ParsePanel, EmptyCellIsMasked) {
  const auto dm = parse("date,a,b\n2000-01-01,1.5,2\n2000-01-08,,3\n2000-01-15,4,5\n");
  EXPECT_EQ(dm.periods(), 3);
  EXPECT_EQ(dm.sites(), 2);
  EXPECT_EQ(dm.mask.count(), 5);
  EXPECT_FALSE(dm.mask(1, 0));
  EXPECT_DOUBLE_EQ(dm.values(0, 0), 1.5);
  EXPECT_EQ(dm.site_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(dm.period_index[2], "2000-01-15");
}

TEST(ParsePanel, Rejections) {
  EXPECT_EQ(kind_of("date,a,a\n1,1,2\n2,3,4\n"), ErrorKind::data);  // duplicated site
  EXPECT_EQ(kind_of("date,a\n1,1\n2,2\n"), ErrorKind::data);        // K < 2
  EXPECT_EQ(kind_of("date,a,b\n1,1,2\n2,3\n"), ErrorKind::data);    // ragged
  EXPECT_EQ(kind_of("date,a,b\n1,1,x\n2,3,4\n"), ErrorKind::data);  // non-numeric
  EXPECT_EQ(kind_of("date,a,b\n"), ErrorKind::data);                // no rows
  EXPECT_EQ(kind_of(""), ErrorKind::data);                          // no header
  EXPECT_EQ(kind_of("date,a,b\n1,1,nan\n2,3,4\n"), ErrorKind::data);
}

TEST(ParsePanel, CommentsAndBlankLines) {
  const auto dm = parse("# exported\ndate,a,b\n\n1,1,2\n# mid\n2,3,4\n");
  EXPECT_EQ(dm.periods(), 2);
}

TEST(ParsePanel, FortyFiveSites848Rows) {
  std::ostringstream csv;
  csv << "date";
  for (int k = 0; k < 45; ++k) csv << ",g" << k;
  csv << "\n";
  Rng rng(1);
  for (int t = 0; t < 848; ++t) {
    csv << t + 1;
    for (int k = 0; k < 45; ++k) csv << "," << rng.uniform() * 100.0;
    csv << "\n";
  }
  const auto dm = parse(csv.str());
  EXPECT_EQ(dm.periods(), 848);
  EXPECT_EQ(dm.sites(), 45);
}

TEST(ParsePanel, MonthFilterWraps) {
  const std::string text =
      "date,a,b\n2000-10-01,1,1\n2000-11-01,2,2\n2000-12-01,3,3\n2001-01-01,4,4\n2001-03-01,5,5\n2001-04-01,6,6\n";
  IngestConfig cfg;
  cfg.month_from = 11;
  cfg.month_to = 3;
  const auto dm = parse(text, cfg);
  ASSERT_EQ(dm.periods(), 4);
  EXPECT_DOUBLE_EQ(dm.values(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(dm.values(3, 0), 5.0);
}

TEST(LoadPanel, MissingFileNamesPath) {
  try {
    load_panel("/nonexistent/flows.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/flows.csv"), std::string::npos);
  }
}

TEST(WritePanel, RoundTripIsBitIdentical) {
  Rng rng(2);
  Matrix v(50, 3);
  for (Index t = 0; t < v.rows(); ++t)
    for (Index k = 0; k < v.cols(); ++k) v(t, k) = std::exp(10.0 * rng.normal()) * (rng.uniform() < 0.5 ? -1 : 1);
  auto dm = panel_from_matrix(v);
  dm.mask(4, 1) = false;
  std::ostringstream out;
  write_panel(out, dm);
  const auto back = parse(out.str());
  ASSERT_EQ(back.periods(), 50);
  for (Index t = 0; t < v.rows(); ++t)
    for (Index k = 0; k < v.cols(); ++k) {
      ASSERT_EQ(back.mask(t, k), dm.mask(t, k));
      if (dm.mask(t, k)) {
        ASSERT_EQ(std::memcmp(&back.values(t, k), &dm.values(t, k), sizeof(double)), 0);
      }
    }
}

TEST(Aggregate, BlockMax) {
  auto daily = panel_from_matrix((Matrix(3, 2) << 1, 0, 5, 0, 3, 7).finished());
  daily.mask(0, 1) = false;
  daily.mask(1, 1) = false;
  EXPECT_EQ(aggregate_period_maxima(daily, 3).values(0, 0), 5.0);
  EXPECT_EQ(aggregate_period_maxima(daily, 3).values(0, 1), 7.0);  // [missing, missing, 7]

  daily.mask(2, 1) = false;
  EXPECT_FALSE(aggregate_period_maxima(daily, 3).mask(0, 1));
  EXPECT_THROW(aggregate_period_maxima(daily, 4), Error);
  EXPECT_THROW(aggregate_period_maxima(daily, 0), Error);
}

TEST(Aggregate, RandomMasksMatchBruteForce) {
  Rng rng(3);
  Matrix v(70, 4);
  for (Index t = 0; t < 70; ++t)
    for (Index k = 0; k < 4; ++k) v(t, k) = rng.normal();
  auto daily = panel_from_matrix(v, {}, 365.0);
  for (Index t = 0; t < 70; ++t)
    for (Index k = 0; k < 4; ++k) daily.mask(t, k) = rng.uniform() < 0.6;
  const auto weekly = aggregate_period_maxima(daily, 7);
  ASSERT_EQ(weekly.periods(), 10);
  EXPECT_DOUBLE_EQ(weekly.periods_per_year, 365.0 / 7.0);
  for (Index b = 0; b < 10; ++b)
    for (Index k = 0; k < 4; ++k) {
      bool any = false;
      double mx = -1e300;
      for (Index t = 7 * b; t < 7 * b + 7; ++t)
        if (daily.mask(t, k)) {
          any = true;
          mx = std::max(mx, v(t, k));
        }
      ASSERT_EQ(weekly.mask(b, k), any);
      if (any) {
        ASSERT_EQ(weekly.values(b, k), mx);
      }
    }
}

TEST(Aggregate, PeriodOneIsIdentity) {
  Rng rng(4);
  Matrix v(20, 3);
  for (Index t = 0; t < 20; ++t)
    for (Index k = 0; k < 3; ++k) v(t, k) = rng.normal();
  auto dm = panel_from_matrix(v);
  dm.mask(5, 2) = false;
  const auto once = aggregate_period_maxima(dm, 1);
  EXPECT_EQ(once.mask, dm.mask);
  for (Index t = 0; t < 20; ++t)
    for (Index k = 0; k < 3; ++k)
      if (dm.mask(t, k)) {
        EXPECT_EQ(once.values(t, k), v(t, k));
      }
  EXPECT_EQ(once.period_index, dm.period_index);
}

TEST(CompleteRows, Definitions) {
  auto dm = panel_from_matrix(Matrix::Ones(10, 3));
  EXPECT_EQ(complete_rows(dm).rows.size(), 10u);
  dm.mask(2, 1) = false;
  const auto idx = complete_rows(dm);
  EXPECT_EQ(idx.rows, (std::vector<Index>{0, 1, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_DOUBLE_EQ(idx.retained_fraction, 0.9);
  dm.mask.setConstant(false);
  EXPECT_THROW(complete_rows(dm), Error);
}

TEST(CompleteRows, EightPercentMissingRows) {
  Rng rng(5);
  auto dm = panel_from_matrix(Matrix::Ones(5000, 6));
  for (Index t = 0; t < dm.periods(); ++t)
    if (rng.uniform() < 0.08) dm.mask(t, static_cast<Index>(rng.below(6))) = false;
  EXPECT_NEAR(complete_rows(dm).retained_fraction, 0.92, 0.01);
}

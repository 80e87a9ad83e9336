#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace tagd;

TEST(Confusion, PerfectIsDiagonal) {
  const std::vector<int> y = {0, 1, 2, 2, 1};
  const auto cm = confusion(y, y, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) {
        EXPECT_EQ(cm(i, j), 0);
      }
    }
  }
  const auto m = metrics(cm);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.far, 0.0);
  EXPECT_EQ(m.frr, 0.0);
}

TEST(Confusion, AllPredictedZero) {
  const std::vector<int> t = {0, 1, 2}, p = {0, 0, 0};
  const auto cm = confusion(t, p, 3);
  EXPECT_EQ(cm.col_sum(0), 3);
}

TEST(Confusion, MatchesTallyOracle) {
  auto s = rng(21);
  std::vector<int> t(300), p(300);
  for (auto& v : t) v = int(s.index(5));
  for (auto& v : p) v = int(s.index(5));
  const auto cm = confusion(t, p, 5);
  const auto ref = oracle::tally(t, p, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(cm(i, j), ref[i][j]);
}

TEST(Metrics, HandArithmeticTwoByTwo) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 8);
  cm.add(0, 1, 2);
  cm.add(1, 0, 1);
  cm.add(1, 1, 9);
  const auto m = metrics(cm);
  EXPECT_EQ(*m.per_class[0].far, 1.0 / 10.0);
  EXPECT_EQ(*m.per_class[0].frr, 2.0 / 10.0);
  EXPECT_EQ(*m.per_class[1].far, 2.0 / 10.0);
  EXPECT_EQ(*m.per_class[1].frr, 1.0 / 10.0);
  EXPECT_EQ(m.far, (1.0 / 10.0 + 2.0 / 10.0) / 2.0);
  EXPECT_EQ(m.frr, (2.0 / 10.0 + 1.0 / 10.0) / 2.0);
  EXPECT_NEAR(m.far, 0.15, 1e-15);
  EXPECT_EQ(m.accuracy, 17.0 / 20.0);
}

TEST(Metrics, AccuracyIdentityProperty) {
  auto s = rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + int(s.index(6));
    ConfusionMatrix cm{std::size_t(n)};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cm.add(std::size_t(i), std::size_t(j), std::int64_t(s.index(20)) + (i == j ? 1 : 0));
    const auto m = metrics(cm);
    std::int64_t fn = 0;
    for (const auto& r : m.per_class) fn += r.fn;
    EXPECT_NEAR(m.accuracy, 1.0 - double(fn) / double(cm.total()), 1e-12);
  }
}

TEST(Metrics, UndefinedRatesExcludedWithWarning) {
  // class 2 never appears in truth: its FRR is undefined
  const std::vector<int> t = {0, 0, 1, 1}, p = {0, 2, 1, 1};
  const auto m = evaluate(t, p, 3);
  EXPECT_FALSE(m.per_class[2].frr.has_value());
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_DOUBLE_EQ(m.frr, (0.5 + 0.0) / 2.0);
}

TEST(Metrics, MicroAveraging) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 8);
  cm.add(0, 1, 2);
  cm.add(1, 0, 1);
  cm.add(1, 1, 9);
  const auto m = metrics(cm, Averaging::Micro);
  EXPECT_DOUBLE_EQ(m.far, 3.0 / 20.0);
  EXPECT_DOUBLE_EQ(m.frr, 3.0 / 20.0);
}

TEST(Metrics, CsvStable) {
  const std::vector<int> t = {0, 1, 1, 2}, p = {0, 1, 2, 2};
  std::ostringstream a, b;
  write_metrics_csv(a, evaluate(t, p, 3));
  write_metrics_csv(b, evaluate(t, p, 3));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("accuracy"), std::string::npos);
}

TEST(Metrics, RandomMatricesMatchHandOracle) {
  auto s = rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + s.index(8);
    std::vector<std::vector<long>> raw(n, std::vector<long>(n));
    ConfusionMatrix cm(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        raw[i][j] = long(s.index(i == j ? 30 : 6));
        cm.add(i, j, raw[i][j]);
      }
    if (cm.total() == 0) continue;
    const auto m = metrics(cm);
    const auto h = oracle::hand_metrics(raw);
    EXPECT_EQ(m.accuracy, h.accuracy);
    EXPECT_EQ(m.far, h.far);
    EXPECT_EQ(m.frr, h.frr);
  }
}

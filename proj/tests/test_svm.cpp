#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace tagd;
using svm::RowMatrix;

namespace {

struct Problem {
  RowMatrix X;
  std::vector<int> y;
  std::vector<std::vector<double>> rows;
};

// Two overlapping Gaussian blobs in d dimensions, labels +1 / -1.
Problem random_problem(std::size_t n, std::size_t d, double separation, RandomStream& s) {
  Problem p;
  p.X.resize(Eigen::Index(n), Eigen::Index(d));
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i % 2 ? 1 : -1;
    p.y.push_back(label);
    std::vector<double> row;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = s.normal() + (j == 0 ? separation * label : 0.0);
      p.X(Eigen::Index(i), Eigen::Index(j)) = v;
      row.push_back(v);
    }
    p.rows.push_back(row);
  }
  return p;
}

// k Gaussian classes around well-separated centres
std::pair<RowMatrix, std::vector<int>> blobs(std::size_t per_class, int k, std::size_t d, double spread, RandomStream& s) {
  RowMatrix X(Eigen::Index(per_class * std::size_t(k)), Eigen::Index(d));
  std::vector<int> y;
  for (int c = 0; c < k; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto r = Eigen::Index(y.size());
      for (std::size_t j = 0; j < d; ++j) X(r, Eigen::Index(j)) = s.normal() * spread + (j == std::size_t(c) % d ? 5.0 : 0.0);
      y.push_back(c);
    }
  return {X, y};
}

}  // namespace

TEST(BinarySvm, SeparableBlobsTrainPerfectly) {
  auto s = rng(1);
  auto p = random_problem(40, 2, 4.0, s);
  auto stream = rng(2);
  const auto m = svm::train_binary(p.X, p.y, {}, stream);
  EXPECT_TRUE(m.converged);
  for (Eigen::Index i = 0; i < p.X.rows(); ++i) EXPECT_GT(p.y[std::size_t(i)] * m.decision(p.X.row(i).transpose()), 0);
}

TEST(BinarySvm, MatchesSlowReference) {
  auto s = rng(100);
  for (int trial = 0; trial < 20; ++trial) {
    const double C = trial % 2 ? 1.0 : 10.0;
    auto p = random_problem(20, 2, 1.0, s);
    auto stream = rng(std::uint64_t(trial));
    svm::SvmOptions opt;
    opt.C = C;
    opt.tol = 1e-6;
    opt.max_iter = 100000;
    const auto m = svm::train_binary(p.X, p.y, opt, stream);
    const auto ref = oracle::reference_svm(p.rows, p.y, C);
    const double ours = svm::primal_objective(m, p.X, p.y, C);
    EXPECT_LT(std::abs(ref.primal - ref.dual) / std::abs(ref.primal), 1e-4) << "reference did not converge";
    EXPECT_LT(std::abs(ours - ref.primal) / std::abs(ref.primal), 1e-3) << "trial " << trial;
  }
}

TEST(BinarySvm, DualFeasibleWithSmallGap) {
  auto s = rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_problem(60, 4, 1.0, s);
    auto stream = rng(std::uint64_t(trial));
    svm::SvmOptions opt;
    opt.C = 5.0;
    opt.tol = 1e-6;
    opt.max_iter = 100000;
    const auto m = svm::train_binary(p.X, p.y, opt, stream);
    for (Eigen::Index i = 0; i < m.alpha.size(); ++i) {
      EXPECT_GE(m.alpha(i), 0.0);
      EXPECT_LE(m.alpha(i), opt.C);
    }
    const double P = svm::primal_objective(m, p.X, p.y, opt.C), D = svm::dual_objective(m.alpha, p.X, p.y);
    EXPECT_LE((P - D) / std::abs(P), 1e-3);
    EXPECT_GE(P - D, -1e-9 * std::abs(P));
  }
}

TEST(BinarySvm, DuplicatingPointsKeepsSolution) {
  auto s = rng(13);
  auto p = random_problem(20, 2, 3.0, s);
  RowMatrix X2(40, 2);
  X2 << p.X, p.X;
  std::vector<int> y2 = p.y;
  y2.insert(y2.end(), p.y.begin(), p.y.end());
  svm::SvmOptions opt;
  opt.tol = 1e-9;
  opt.max_iter = 200000;
  auto s1 = rng(1), s2 = rng(1);
  const auto a = svm::train_binary(p.X, p.y, opt, s1);
  const auto b = svm::train_binary(X2, y2, opt, s2);
  EXPECT_LT((a.w - b.w).norm(), 1e-6);
  EXPECT_NEAR(a.b, b.b, 1e-6);
}

TEST(BinarySvm, ErrorPaths) {
  RowMatrix X(2, 1);
  X << 1, 2;
  auto s = rng(0);
  EXPECT_THROW(svm::train_binary(X, std::vector<int>{1, 1}, {}, s), InvalidArgument);
  EXPECT_THROW(svm::train_binary(X, std::vector<int>{1, 0}, {}, s), InvalidArgument);
  X(0, 0) = std::nan("");
  EXPECT_THROW(svm::train_binary(X, std::vector<int>{1, -1}, {}, s), InvalidArgument);
}

TEST(Multiclass, SeparatedGaussians) {
  auto s = rng(3);
  auto [X, y] = blobs(30, 3, 3, 0.7, s);
  auto [Xt, yt] = blobs(30, 3, 3, 0.7, s);
  const auto m = svm::train_multiclass(X, y, 3, {}, rng(4));
  const auto met = evaluate(yt, m.predict_all(Xt), 3);
  EXPECT_GE(met.accuracy, 0.95);
}

TEST(Multiclass, LabelPermutationPermutesPredictions) {
  auto s = rng(31);
  auto [X, y] = blobs(20, 4, 4, 1.0, s);
  const std::vector<int> pi = {2, 0, 3, 1};
  std::vector<int> yp;
  for (int v : y) yp.push_back(pi[std::size_t(v)]);
  const auto a = svm::train_multiclass(X, y, 4, {}, rng(5));
  const auto b = svm::train_multiclass(X, yp, 4, {}, rng(5));
  const auto pa = a.predict_all(X), pb = b.predict_all(X);
  int agree = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) agree += pi[std::size_t(pa[i])] == pb[i];
  EXPECT_EQ(agree, int(pa.size()));
}

TEST(Multiclass, ArgmaxInvariantUnderScoreScaling) {
  auto s = rng(6);
  auto [X, y] = blobs(15, 3, 3, 2.0, s);
  auto m = svm::train_multiclass(X, y, 3, {}, rng(1));
  const auto before = m.predict_all(X);
  m.weights *= 3.7;
  m.bias *= 3.7;
  EXPECT_EQ(m.predict_all(X), before);
}

TEST(Multiclass, LargerCDoesNotReduceTrainingAccuracyOnSeparable) {
  auto s = rng(7);
  auto [X, y] = blobs(20, 3, 3, 0.5, s);
  double last = 0;
  for (double C : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    svm::SvmOptions opt;
    opt.C = C;
    const auto m = svm::train_multiclass(X, y, 3, opt, rng(2));
    const double acc = evaluate(y, m.predict_all(X), 3).accuracy;
    EXPECT_GE(acc, last);
    last = acc;
  }
  EXPECT_EQ(last, 1.0);
}

TEST(Multiclass, SaveLoadRoundTrip) {
  auto s = rng(9);
  auto [X, y] = blobs(10, 3, 3, 1.0, s);
  const auto m = svm::train_multiclass(X, y, 3, {}, rng(1));
  std::stringstream buf;
  svm::save_model(buf, m);
  const auto back = svm::load_model(buf);
  EXPECT_EQ(back.predict_all(X), m.predict_all(X));
  EXPECT_EQ(back.weights, m.weights);
  std::istringstream bad("SVM v9\n");
  EXPECT_THROW(svm::load_model(bad), DataError);
}

TEST(Rfe, ZeroFeatureEliminatedFirst) {
  auto s = rng(10);
  RowMatrix X(40, 2);
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    y.push_back(i % 2);
    X(i, 0) = 0.0;
    X(i, 1) = (i % 2 ? 2.0 : -2.0) + 0.3 * s.normal();
  }
  const auto r = svm::rfe(X, y, X, y, 2, {}, rng(1));
  EXPECT_EQ(r.elimination_order.front(), 0u);
  EXPECT_EQ(r.steps.size(), 1u);
}

TEST(Rfe, InformativeFeatureSurvivesAndScheduleIsMonotone) {
  auto s = rng(11);
  const int n = 120;
  RowMatrix X(n, 4), Xe(n, 4);
  std::vector<int> y, ye;
  for (int i = 0; i < n; ++i) {
    y.push_back(i % 2);
    ye.push_back(i % 2);
    X(i, 0) = (i % 2 ? 1.5 : -1.5) + 0.5 * s.normal();
    Xe(i, 0) = (i % 2 ? 1.5 : -1.5) + 0.5 * s.normal();
    for (int j = 1; j < 4; ++j) X(i, j) = s.normal(), Xe(i, j) = s.normal();
  }
  const auto r = svm::rfe(X, y, Xe, ye, 2, {}, rng(3));
  EXPECT_EQ(r.elimination_order.back(), 0u);
  ASSERT_EQ(r.steps.size(), 3u);
  for (std::size_t i = 0; i < r.steps.size(); ++i) EXPECT_EQ(r.steps[i].active_count, 4 - i);
  EXPECT_GT(r.final_model.accuracy, 0.9);
  const auto again = svm::rfe(X, y, Xe, ye, 2, {}, rng(3));
  EXPECT_EQ(again.elimination_order, r.elimination_order);
}

TEST(Rfe, NeedsTwoFeatures) {
  RowMatrix X(4, 1);
  X << 1, 2, 3, 4;
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_THROW(svm::rfe(X, y, X, y, 2, {}, rng(0)), InvalidArgument);
}

TEST(SvmPipeline, SyntheticCorpus) {
  const auto ds = synth_dataset({});
  auto [tr, te] = split(ds, {0.8, 7});
  const auto a = features_all(tr), b = features_all(te);
  const auto st = fit_standardizer(std::span<const FeatureVector>(a));
  const auto A = st.apply_all<FeatureVector>(a), B = st.apply_all<FeatureVector>(b);
  const auto m = svm::train_multiclass(svm::to_matrix(A), svm::labels_of(A), 10, {}, rng(7));
  EXPECT_GE(evaluate(svm::labels_of(B), m.predict_all(svm::to_matrix(B)), 10).accuracy, 0.9);
}

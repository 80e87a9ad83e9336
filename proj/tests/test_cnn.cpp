#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"

using namespace tagd;
using namespace tagd::cnn;

namespace {

struct Corpus {
  std::vector<FixedSequence> train, test;
  int users = 0;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    const auto ds = synth_dataset({});
    auto [tr, te] = split(ds, {0.8, 7});
    return Corpus{resample_all(tr), resample_all(te), ds.num_users()};
  }();
  return c;
}

// Trained once with the default configuration and shared by several tests.
const std::pair<CnnModel, TrainReport>& trained() {
  static const auto fitted = [] {
    CnnConfig cfg;
    cfg.seed = 7;
    return fit(cfg, corpus().users, corpus().train, corpus().test);
  }();
  return fitted;
}

CnnConfig tiny() {
  CnnConfig c;
  c.kernel = 3;
  c.stride = 1;
  c.filters1 = 3;
  c.filters2 = 4;
  c.hidden = 5;
  c.dropout = 0.3;
  c.epochs = 2;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(CnnShape, DocumentedCells) {
  const auto a = shape_for(CnnConfig{});
  EXPECT_EQ(a.conv1, 66u);
  EXPECT_EQ(a.conv2, 10u);
  EXPECT_EQ(a.pooled, 5u);
  EXPECT_EQ(a.flatten, 1280u);
  CnnConfig c;
  c.kernel = 25;
  c.stride = 1;
  const auto b = shape_for(c);
  EXPECT_EQ(b.conv1, 376u);
  EXPECT_EQ(b.conv2, 352u);
  EXPECT_EQ(b.pooled, 176u);
}

TEST(CnnShape, AllTableCellsMatchHandValues) {
  for (const auto& row : oracle::table_shapes()) {
    CnnConfig c;
    c.kernel = row.k;
    c.stride = row.s;
    const auto s = shape_for(c);
    EXPECT_EQ(s.conv1, row.conv1) << row.k << "," << row.s;
    EXPECT_EQ(s.conv2, row.conv2) << row.k << "," << row.s;
    EXPECT_EQ(s.pooled, row.pooled) << row.k << "," << row.s;
    EXPECT_EQ(s.flatten, row.flatten) << row.k << "," << row.s;
  }
}

TEST(CnnShape, OversizedKernelRejected) {
  CnnConfig c;
  c.kernel = 500;
  EXPECT_THROW(shape_for(c), InvalidArgument);
  EXPECT_THROW(build(c, 10), InvalidArgument);
  c.kernel = 200;  // fits once, not twice
  EXPECT_THROW(build(c, 10), InvalidArgument);
}

TEST(ConvNetGrad, WholeNetworkFiniteDifferences) {
  auto s = rng(21);
  const auto cfg = tiny();
  ConvNet net(cfg, 14, 3, 4);
  net.init(s);
  oracle::nudge(net.params(), s);
  auto x = oracle::random_tensor(3, 14, 3, s);
  const std::vector<int> y = {0, 2, 3};
  auto loss = [&] {
    ConvNet::Cache c;
    auto mask = rng(5);
    return nn::softmax_xent(net.forward(x, mask, true, c), y).loss;
  };
  ConvNet::Cache c;
  auto mask = rng(5);
  const auto out = net.forward(x, mask, true, c);
  auto params = net.params();
  nn::zero_grads(params);
  const auto dx = net.backward(c, nn::softmax_xent(out, y).grad, true);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto numeric = oracle::numeric_grad(params[k]->value, loss);
    EXPECT_LT(oracle::max_rel_error(params[k]->grad, numeric), 1e-4) << ConvNet::param_names()[k];
  }
  EXPECT_LT(oracle::max_rel_error(dx.data, oracle::numeric_grad(x.data, loss)), 1e-4);
}

TEST(CnnTrain, LossDecreasesOnFixedBatch) {
  const auto& data = corpus().train;
  auto model = build(CnnConfig{}, corpus().users);
  model.scaler = fit_standardizer(std::span<const FixedSequence>(data));
  std::vector<FixedSequence> scaled;
  std::vector<int> labels;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < 32; ++i) {
    scaled.push_back(model.scaler.apply(data[i * 7]));
    labels.push_back(data[i * 7].user_id);
    idx.push_back(i);
  }
  const auto x = stack(scaled, idx);
  nn::Adam adam;
  auto params = model.net.params();
  double last = 1e300;
  for (int step = 0; step < 6; ++step) {
    ConvNet::Cache c;
    RandomStream unused(0);
    const auto r = nn::softmax_xent(model.net.forward(x, unused, false, c), labels);
    EXPECT_LT(r.loss, last) << "step " << step;
    last = r.loss;
    nn::zero_grads(params);
    model.net.backward(c, r.grad);
    adam.step(params);
  }
}

TEST(CnnTrain, SameSeedSameWeights) {
  auto cfg = tiny();
  cfg.seed = 3;
  std::vector<FixedSequence> small(corpus().train.begin(), corpus().train.begin() + 40);
  const auto a = fit(cfg, corpus().users, small, {});
  const auto b = fit(cfg, corpus().users, small, {});
  const auto pa = a.first.net.params(), pb = b.first.net.params();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k]->value, pb[k]->value);
  cfg.seed = 4;
  const auto c = fit(cfg, corpus().users, small, {});
  EXPECT_NE(c.first.net.params()[0]->value, pa[0]->value);
}

TEST(CnnTrain, SyntheticCorpusLearnable) {
  const auto& [model, report] = trained();
  ASSERT_TRUE(report.test);
  EXPECT_GE(report.test->accuracy, 0.9);
  for (const auto& r : report.test->per_class) EXPECT_GE(1.0 - *r.frr, 0.8);
  EXPECT_EQ(report.epochs.size(), 50u);
}

TEST(CnnPredict, DeterministicAndNormalised) {
  const auto& model = trained().first;
  const auto a = predict(model, corpus().test[3]);
  const auto b = predict(model, corpus().test[3]);
  EXPECT_EQ(a.probabilities, b.probabilities);
  double sum = 0;
  for (double p : a.probabilities) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_EQ(a.label, int(std::max_element(a.probabilities.begin(), a.probabilities.end()) - a.probabilities.begin()));
}

TEST(CnnModelIo, RoundTrip) {
  const auto& model = trained().first;
  std::stringstream buf;
  save_model(buf, model);
  const auto back = load_model(buf);
  const auto a = predict_all(model, corpus().test), b = predict_all(back, corpus().test);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].probabilities, b[i].probabilities);
}

TEST(CnnSweep, CardinalityAndCsvRows) {
  auto cfg = tiny();
  cfg.filters1 = 8;
  cfg.filters2 = 8;
  cfg.epochs = 1;
  const std::vector<std::size_t> ks = {3, 5}, ss = {3, 6};
  const auto cells = sweep(corpus().train, corpus().test, corpus().users, ks, ss, cfg, 2);
  EXPECT_EQ(cells.size(), 4u);
  std::ostringstream longf, grid;
  write_sweep_long_csv(longf, cells);
  write_sweep_grid_csv(grid, cells);
  const auto long_text = longf.str(), grid_text = grid.str();
  EXPECT_EQ(std::count(long_text.begin(), long_text.end(), '\n'), 5);
  EXPECT_EQ(std::count(grid_text.begin(), grid_text.end(), '\n'), 3);
  // parallel and serial sweeps agree exactly
  const auto serial = sweep(corpus().train, corpus().test, corpus().users, ks, ss, cfg, 1);
  std::ostringstream longs;
  write_sweep_long_csv(longs, serial);
  EXPECT_EQ(longs.str(), longf.str());
}

TEST(CnnSweep, AllCellsStrongOnSyntheticCorpus) {
  // full-size network, reduced epochs so the 12-cell grid stays affordable
  CnnConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 7;
  const std::vector<std::size_t> ks = {3, 5, 10, 25}, ss = {1, 3, 6};
  for (const auto& c : sweep(corpus().train, corpus().test, corpus().users, ks, ss, cfg))
    EXPECT_GE(c.report.test->accuracy, 0.85) << "k=" << c.kernel << " s=" << c.stride;
}

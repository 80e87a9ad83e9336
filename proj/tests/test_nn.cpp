#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"

using namespace tagd;
using namespace tagd::nn;

namespace {

constexpr double kTol = 1e-4;

// L = <f(), r> for a fixed random r; returns max relative error between the
// analytic gradient of L with respect to v and central differences.
double check(Buffer& v, std::span<const double> analytic, const std::function<Tensor3()>& f,
             const std::vector<double>& r) {
  const auto numeric = oracle::numeric_grad(v, [&] { return oracle::dot(f().data, r); });
  return oracle::max_rel_error(analytic, numeric);
}

std::vector<double> random_vec(std::size_t n, RandomStream& s) {
  std::vector<double> v(n);
  for (auto& x : v) x = s.normal();
  return v;
}

}  // namespace

TEST(Conv1d, OutputLength) {
  EXPECT_EQ(conv_output_length(400, 10, 6), 66u);
  EXPECT_THROW(conv_output_length(5, 10, 1), InvalidArgument);
}

TEST(Conv1d, IdentityKernel) {
  ConvParams p(1, 1, 1, 1);
  p.weight.value[0] = 1.0;
  auto s = rng(1);
  const auto x = oracle::random_tensor(2, 17, 1, s);
  EXPECT_EQ(conv1d_forward(x, p), x);
}

TEST(Conv1d, MatchesDirectSum) {
  auto s = rng(2);
  ConvParams p(3, 2, 2, 4);
  p.init(s);
  for (auto& b : p.bias.value) b = s.normal();
  const auto x = oracle::random_tensor(3, 11, 2, s);
  const auto y = conv1d_forward(x, p);
  ASSERT_EQ(y.length, 5u);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t o = 0; o < 4; ++o) {
        double v = p.bias.value[o];
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t c = 0; c < 2; ++c) v += p.weight.value[(o * 3 + j) * 2 + c] * x(b, t * 2 + j, c);
        EXPECT_NEAR(y(b, t, o), v, 1e-12);
      }
}

TEST(Conv1d, GradientCheck) {
  auto s = rng(3);
  for (auto [k, st, L] : std::vector<std::array<std::size_t, 3>>{{3, 1, 9}, {4, 2, 13}, {5, 3, 16}, {2, 6, 20}}) {
    ConvParams p(k, st, 3, 4);
    p.init(s);
    for (auto& b : p.bias.value) b = s.normal();
    auto x = oracle::random_tensor(2, L, 3, s);
    const auto y = conv1d_forward(x, p);
    const auto r = random_vec(y.size(), s);
    Tensor3 dy(y.batch, y.length, y.channels);
    dy.data.assign(r.begin(), r.end());
    p.weight.zero_grad();
    p.bias.zero_grad();
    const auto dx = conv1d_backward(x, dy, p);
    auto f = [&] { return conv1d_forward(x, p); };
    EXPECT_LT(check(x.data, dx.data, f, r), kTol);
    EXPECT_LT(check(p.weight.value, p.weight.grad, f, r), kTol);
    EXPECT_LT(check(p.bias.value, p.bias.grad, f, r), kTol);
  }
}

TEST(ConvTranspose, OutputLength) { EXPECT_EQ(conv_transpose_output_length(100, 4, 2), 202u); }

TEST(ConvTranspose, GradientCheck) {
  auto s = rng(4);
  for (auto [k, st, L] : std::vector<std::array<std::size_t, 3>>{{4, 2, 5}, {3, 1, 6}, {2, 3, 4}, {5, 2, 3}}) {
    ConvTransposeParams p(k, st, 3, 2);
    p.init(s);
    for (auto& b : p.bias.value) b = s.normal();
    auto x = oracle::random_tensor(2, L, 3, s);
    const auto y = conv1d_transpose_forward(x, p);
    const auto r = random_vec(y.size(), s);
    Tensor3 dy(y.batch, y.length, y.channels);
    dy.data.assign(r.begin(), r.end());
    p.weight.zero_grad();
    p.bias.zero_grad();
    const auto dx = conv1d_transpose_backward(x, dy, p);
    auto f = [&] { return conv1d_transpose_forward(x, p); };
    EXPECT_LT(check(x.data, dx.data, f, r), kTol);
    EXPECT_LT(check(p.weight.value, p.weight.grad, f, r), kTol);
    EXPECT_LT(check(p.bias.value, p.bias.grad, f, r), kTol);
  }
}

TEST(ConvTranspose, AdjointIdentity) {
  auto s = rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 1 + s.index(6), st = 1 + s.index(4), a = 1 + s.index(4), b = 1 + s.index(4);
    const std::size_t L = k + st * s.index(8) + s.index(st);  // also misaligned tails
    ConvParams c(k, st, a, b);
    ConvTransposeParams t(k, st, b, a);
    c.init(s);
    t.weight.value = c.weight.value;
    const auto x = oracle::random_tensor(2, L, a, s);
    const auto cx = conv1d_forward(x, c);
    const auto y = oracle::random_tensor(2, cx.length, b, s);
    const auto ty = conv1d_transpose_forward(y, t);
    ASSERT_LE(ty.length, L);
    double rhs = 0;
    for (std::size_t bb = 0; bb < 2; ++bb)
      for (std::size_t i = 0; i < ty.length; ++i)
        for (std::size_t ch = 0; ch < a; ++ch) rhs += x(bb, i, ch) * ty(bb, i, ch);
    const double lhs = oracle::dot(cx.data, y.data);
    EXPECT_LT(std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12), 1e-6);
  }
}

TEST(MaxPool, Definition) {
  Tensor3 x(1, 4, 1);
  x.data = {1, 3, 2, 4};
  const auto r = maxpool1d_forward(x, 2);
  EXPECT_EQ(r.out.data, (Buffer{3, 4}));
}

TEST(MaxPool, TiesGoToFirstIndex) {
  Tensor3 x(1, 6, 2, 1.5);
  const auto r = maxpool1d_forward(x, 3);
  EXPECT_EQ(r.out.data, Buffer(4, 1.5));
  Tensor3 dy(1, 2, 2, 1.0);
  const auto dx = maxpool1d_backward(x, dy, r.argmax);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(dx(0, 0, c), 1.0);
    EXPECT_EQ(dx(0, 1, c), 0.0);
    EXPECT_EQ(dx(0, 3, c), 1.0);
  }
}

TEST(MaxPool, GradientCheckDistinctValues) {
  auto s = rng(6);
  Tensor3 x(2, 9, 3);
  const auto perm = s.permutation(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = 0.01 * double(perm[i]);
  const auto r = maxpool1d_forward(x, 2);
  const auto g = random_vec(r.out.size(), s);
  Tensor3 dy(r.out.batch, r.out.length, r.out.channels);
  dy.data.assign(g.begin(), g.end());
  const auto dx = maxpool1d_backward(x, dy, r.argmax);
  EXPECT_LT(check(x.data, dx.data, [&] { return maxpool1d_forward(x, 2).out; }, g), kTol);
}

TEST(Dense, IdentityWeights) {
  DenseParams p(4, 4);
  for (std::size_t i = 0; i < 4; ++i) p.weight.value[i * 4 + i] = 1.0;
  auto s = rng(7);
  const auto x = oracle::random_tensor(3, 1, 4, s);
  EXPECT_EQ(dense_forward(x, p).data, x.data);
}

TEST(Dense, GradientCheck) {
  auto s = rng(8);
  DenseParams p(6, 5);
  p.init(s);
  for (auto& b : p.bias.value) b = s.normal();
  auto x = oracle::random_tensor(4, 2, 3, s);
  const auto r = random_vec(4 * 5, s);
  Tensor3 dy(4, 1, 5);
  dy.data.assign(r.begin(), r.end());
  const auto dx = dense_backward(x, dy, p);
  auto f = [&] { return dense_forward(x, p); };
  EXPECT_LT(check(x.data, dx.data, f, r), kTol);
  EXPECT_LT(check(p.weight.value, p.weight.grad, f, r), kTol);
  EXPECT_LT(check(p.bias.value, p.bias.grad, f, r), kTol);
}

TEST(Activations, ReluDefinition) {
  Tensor3 x(1, 1, 3);
  x.data = {-1, 0, 2};
  EXPECT_EQ(relu_forward(x).data, (Buffer{0, 0, 2}));
}

TEST(Activations, GradientChecks) {
  auto s = rng(9);
  auto x = oracle::random_tensor(3, 4, 5, s);
  for (auto& v : x.data)
    if (std::abs(v) < 1e-2) v += 0.1;  // keep away from the ReLU kink
  const auto r = random_vec(x.size(), s);
  Tensor3 dy(3, 4, 5);
  dy.data.assign(r.begin(), r.end());
  {
    const auto dx = relu_backward(relu_forward(x), dy);
    EXPECT_LT(check(x.data, dx.data, [&] { return relu_forward(x); }, r), kTol);
  }
  {
    const auto dx = tanh_backward(tanh_forward(x), dy);
    EXPECT_LT(check(x.data, dx.data, [&] { return tanh_forward(x); }, r), kTol);
  }
  {
    const auto dx = sigmoid_backward(sigmoid_forward(x), dy);
    EXPECT_LT(check(x.data, dx.data, [&] { return sigmoid_forward(x); }, r), kTol);
  }
}

TEST(Activations, SigmoidStableAtExtremes) {
  EXPECT_EQ(sigmoid(-1000), 0.0);
  EXPECT_EQ(sigmoid(1000), 1.0);
  EXPECT_DOUBLE_EQ(sigmoid(0), 0.5);
}

TEST(Dropout, IdentityCases) {
  auto s = rng(10);
  const auto x = oracle::random_tensor(2, 3, 4, s);
  EXPECT_EQ(dropout_forward(x, 0.0, s, true).out, x);
  EXPECT_EQ(dropout_forward(x, 0.7, s, false).out, x);
  EXPECT_THROW(dropout_forward(x, 1.0, s, true), InvalidArgument);
}

TEST(Dropout, SurvivorFractionAndMean) {
  auto s = rng(11);
  Tensor3 x(1, 1, 100000, 1.0);
  const auto r = dropout_forward(x, 0.5, s, true);
  std::size_t alive = 0;
  double sum = 0;
  for (double v : r.out.data) alive += v != 0.0, sum += v;
  EXPECT_NEAR(double(alive) / 1e5, 0.5, 0.01);
  EXPECT_NEAR(sum / 1e5, 1.0, 0.02);
}

TEST(Dropout, GradientCheckWithFixedMask) {
  auto s = rng(12);
  auto x = oracle::random_tensor(2, 3, 4, s);
  auto mask_stream = rng(99);
  const auto fwd = dropout_forward(x, 0.3, mask_stream, true);
  const auto r = random_vec(x.size(), s);
  Tensor3 dy(2, 3, 4);
  dy.data.assign(r.begin(), r.end());
  const auto dx = dropout_backward(dy, fwd.mask);
  EXPECT_LT(check(x.data, dx.data, [&] { auto m = rng(99); return dropout_forward(x, 0.3, m, true).out; }, r), kTol);
}

TEST(Losses, UniformLogitsGiveLogK) {
  Tensor3 logits(2, 1, 46, 0.3);
  const std::vector<int> y = {0, 45};
  EXPECT_NEAR(softmax_xent(logits, y).loss, std::log(46.0), 1e-12);
  EXPECT_NEAR(std::log(46.0), 3.8286, 1e-4);
}

TEST(Losses, BceHalf) {
  Tensor3 p(1, 1, 1, 0.5);
  const std::vector<double> t = {1.0};
  EXPECT_NEAR(bce(p, t).loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_with_logits(Tensor3(1, 1, 1, 0.0), t).loss, std::log(2.0), 1e-15);
}

TEST(Losses, BceClampsSaturatedPredictions) {
  Tensor3 p(1, 1, 2);
  p.data = {0.0, 1.0};
  const std::vector<double> t = {1.0, 0.0};
  const auto r = bce(p, t);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, -std::log(kBceEpsilon), 1e-6);
}

TEST(Losses, SoftmaxSumsToOneUnderLargeLogits) {
  const std::vector<double> z = {1000, 999, -1000};
  const auto p = softmax(z);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_GT(p[0], p[1]);
}

TEST(Losses, GradientChecks) {
  auto s = rng(13);
  auto logits = oracle::random_tensor(4, 1, 5, s);
  const std::vector<int> y = {0, 3, 4, 1};
  auto fx = [&] { return softmax_xent(logits, y).loss; };
  EXPECT_LT(oracle::max_rel_error(softmax_xent(logits, y).grad.data, oracle::numeric_grad(logits.data, fx)), kTol);

  Tensor3 p(1, 1, 6);
  for (auto& v : p.data) v = s.uniform(0.05, 0.95);
  const std::vector<double> t = {1, 0, 1, 1, 0, 0};
  auto fb = [&] { return bce(p, t).loss; };
  EXPECT_LT(oracle::max_rel_error(bce(p, t).grad.data, oracle::numeric_grad(p.data, fb)), kTol);

  auto z = oracle::random_tensor(1, 1, 6, s);
  const std::vector<double> soft = {0.9, 0, 1, 0.9, 0, 1};
  auto fl = [&] { return bce_with_logits(z, soft).loss; };
  EXPECT_LT(oracle::max_rel_error(bce_with_logits(z, soft).grad.data, oracle::numeric_grad(z.data, fl)), kTol);
}

TEST(Losses, FusedBceAgreesWithComposition) {
  auto s = rng(14);
  auto z = oracle::random_tensor(1, 1, 8, s);
  std::vector<double> t(8);
  for (auto& v : t) v = double(s.index(2));
  EXPECT_NEAR(bce_with_logits(z, t).loss, bce(sigmoid_forward(z), t).loss, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Param p(4);
  p.value = {1, -2, 3, 0.5};
  const auto before = p.value;
  Adam opt;
  std::vector<Param*> ps = {&p};
  for (int i = 0; i < 10; ++i) opt.step(ps);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  Param p(3);
  p.grad = {0.3, -7.0, 1e-3};
  Adam opt({0.01, 0.9, 0.999, 1e-8});
  std::vector<Param*> ps = {&p};
  opt.step(ps);
  EXPECT_NEAR(p.value[0], -0.01, 1e-7);
  EXPECT_NEAR(p.value[1], 0.01, 1e-7);
  EXPECT_NEAR(p.value[2], -0.01, 1e-5);
}

TEST(Adam, MinimisesQuadratic) {
  auto s = rng(15);
  Param p(5);
  for (auto& v : p.value) v = s.normal();
  Adam opt;
  std::vector<Param*> ps = {&p};
  int steps = 0;
  auto norm = [&] { double n = 0; for (double v : p.value) n += v * v; return std::sqrt(n); };
  while (norm() >= 1e-3 && steps < 5000) {
    for (std::size_t i = 0; i < 5; ++i) p.grad[i] = 2 * p.value[i];
    opt.step(ps);
    ++steps;
  }
  EXPECT_LT(norm(), 1e-3);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Checkpoint ck;
  ck.meta = {{"model", "test"}, {"note", "two words"}};
  ck.tensors = {{"a", {1.0, -2.5, 1e-300}}, {"b", {}}, {"c", {3.14159}}};
  std::stringstream buf;
  write_checkpoint(buf, ck);
  const std::string bytes = buf.str();
  std::istringstream in(bytes);
  const auto back = read_checkpoint(in);
  EXPECT_EQ(back.meta_value("note"), "two words");
  EXPECT_EQ(back.tensor("a"), ck.tensor("a"));
  EXPECT_EQ(back.tensor("c"), ck.tensor("c"));
  std::istringstream cut(bytes.substr(0, bytes.size() - 4));
  EXPECT_THROW(read_checkpoint(cut), DataError);
  Param p(2);
  EXPECT_THROW(load_into(p, back.tensor("a"), "a"), DataError);
}

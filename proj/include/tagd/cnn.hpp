#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <fstream>
#include <functional>
#include <filesystem>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tagd/core.hpp"
#include "tagd/metrics.hpp"
#include "tagd/nn.hpp"
#include "tagd/preprocess.hpp"

namespace tagd::cnn {

struct CnnConfig {
  std::size_t kernel = 10;
  std::size_t stride = 6;
  std::size_t filters1 = 128;
  std::size_t filters2 = 256;
  double dropout = 0.5;
  std::size_t hidden = 128;
  std::size_t pool = 2;
  int epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  std::uint64_t seed = 0;
};

struct NetShape {
  std::size_t input_length = 0, conv1 = 0, conv2 = 0, pooled = 0, flatten = 0;
};

// conv(k,s) -> conv(k,s) -> maxpool(window) -> flatten, on an input of the given length.
inline NetShape shape_for(const CnnConfig& cfg, std::size_t input_length = kSequenceLength) {
  if (cfg.kernel == 0 || cfg.stride == 0 || cfg.pool == 0) throw InvalidArgument("cnn: kernel, stride and pool must be positive");
  NetShape s;
  s.input_length = input_length;
  if (input_length < cfg.kernel)
    throw InvalidArgument("cnn: kernel " + std::to_string(cfg.kernel) + " longer than input " + std::to_string(input_length));
  s.conv1 = nn::conv_output_length(input_length, cfg.kernel, cfg.stride);
  if (s.conv1 < cfg.kernel)
    throw InvalidArgument("cnn: first conv output (" + std::to_string(s.conv1) + ") shorter than kernel " + std::to_string(cfg.kernel));
  s.conv2 = nn::conv_output_length(s.conv1, cfg.kernel, cfg.stride);
  if (s.conv2 < cfg.pool) throw InvalidArgument("cnn: second conv output shorter than pool window");
  s.pooled = s.conv2 / cfg.pool;
  s.flatten = s.pooled * cfg.filters2;
  return s;
}

// conv -> ReLU -> conv -> ReLU -> dropout -> maxpool -> flatten -> dense -> ReLU -> dense.
// Used both as the authentication classifier (softmax head) and as the GAN
// discriminator (one output, sigmoid head).
class ConvNet {
 public:
  struct Cache {
    nn::Tensor3 x, a1, a2, d;
    std::vector<double> drop_mask;
    std::vector<std::uint32_t> pool_argmax;
    nn::Tensor3 p, h, out;
  };

  ConvNet() = default;
  ConvNet(const CnnConfig& cfg, std::size_t input_length, std::size_t channels, std::size_t outputs)
      : cfg_(cfg),
        shape_(shape_for(cfg, input_length)),
        channels_(channels),
        outputs_(outputs),
        conv1_(cfg.kernel, cfg.stride, channels, cfg.filters1),
        conv2_(cfg.kernel, cfg.stride, cfg.filters1, cfg.filters2),
        hidden_(shape_.flatten, cfg.hidden),
        head_(cfg.hidden, outputs) {
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw InvalidArgument("cnn: dropout rate must lie in [0, 1)");
    if (outputs == 0) throw InvalidArgument("cnn: need at least one output");
  }

  void init(RandomStream& stream) {
    conv1_.init(stream);
    conv2_.init(stream);
    hidden_.init(stream);
    head_.init(stream);
  }

  const CnnConfig& config() const { return cfg_; }
  const NetShape& shape() const { return shape_; }
  std::size_t outputs() const { return outputs_; }
  std::size_t channels() const { return channels_; }

  // Raw output scores (logits). Dropout is active only when training.
  nn::Tensor3 forward(const nn::Tensor3& x, RandomStream& stream, bool training, Cache& c) const {
    if (x.length != shape_.input_length || x.channels != channels_)
      throw InvalidArgument("cnn: input shape " + nn::shape_str(x) + " does not match network");
    c.x = x;
    c.a1 = nn::relu_forward(nn::conv1d_forward(x, conv1_));
    c.a2 = nn::relu_forward(nn::conv1d_forward(c.a1, conv2_));
    auto dr = nn::dropout_forward(c.a2, cfg_.dropout, stream, training);
    c.d = std::move(dr.out);
    c.drop_mask = std::move(dr.mask);
    auto pr = nn::maxpool1d_forward(c.d, cfg_.pool);
    c.p = std::move(pr.out);
    c.pool_argmax = std::move(pr.argmax);
    c.h = nn::relu_forward(nn::dense_forward(c.p, hidden_));
    c.out = nn::dense_forward(c.h, head_);
    return c.out;
  }

  nn::Tensor3 infer(const nn::Tensor3& x) const {
    Cache c;
    RandomStream unused(0);
    return forward(x, unused, false, c);
  }

  // Accumulates parameter gradients; returns dL/dx when requested.
  nn::Tensor3 backward(const Cache& c, const nn::Tensor3& dout, bool need_input_grad = false) {
    auto g = nn::dense_backward(c.h, dout, head_);
    g = nn::relu_backward(c.h, std::move(g));
    g = nn::dense_backward(c.p, g, hidden_);
    g = std::move(g).reshaped(c.p.length, c.p.channels);
    g = nn::maxpool1d_backward(c.d, g, c.pool_argmax);
    g = nn::dropout_backward(std::move(g), c.drop_mask);
    g = nn::relu_backward(c.a2, std::move(g));
    g = nn::conv1d_backward(c.a1, g, conv2_);
    g = nn::relu_backward(c.a1, std::move(g));
    return nn::conv1d_backward(c.x, g, conv1_, need_input_grad);
  }

  std::vector<nn::Param*> params() {
    return {&conv1_.weight, &conv1_.bias, &conv2_.weight, &conv2_.bias,
            &hidden_.weight, &hidden_.bias, &head_.weight, &head_.bias};
  }
  std::vector<const nn::Param*> params() const {
    auto* self = const_cast<ConvNet*>(this);
    auto p = self->params();
    return {p.begin(), p.end()};
  }
  static const std::vector<std::string>& param_names() {
    static const std::vector<std::string> names = {"conv1.w", "conv1.b", "conv2.w", "conv2.b",
                                                   "dense1.w", "dense1.b", "dense2.w", "dense2.b"};
    return names;
  }

 private:
  CnnConfig cfg_;
  NetShape shape_;
  std::size_t channels_ = kAxes;
  std::size_t outputs_ = 1;
  nn::ConvParams conv1_, conv2_;
  nn::DenseParams hidden_, head_;
};

inline nn::Tensor3 stack(std::span<const FixedSequence> seqs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw InvalidArgument("stack: empty batch");
  const std::size_t len = seqs[idx[0]].length;
  nn::Tensor3 t(idx.size(), len, kAxes);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& s = seqs[idx[b]];
    if (s.length != len) throw InvalidArgument("stack: sequences differ in length");
    std::copy(s.data.begin(), s.data.end(), t.sample(b));
  }
  return t;
}

// The authentication model: network plus the per-axis input standardizer
// fitted on its training split.
struct CnnModel {
  CnnConfig config;
  int num_users = 0;
  Standardizer scaler = Standardizer::identity(kAxes);
  ConvNet net;
};

inline CnnModel build(const CnnConfig& cfg, int num_users, std::size_t input_length = kSequenceLength) {
  if (num_users < 2) throw InvalidArgument("cnn: need at least 2 users");
  CnnModel m;
  m.config = cfg;
  m.num_users = num_users;
  m.net = ConvNet(cfg, input_length, kAxes, static_cast<std::size_t>(num_users));
  RandomStream init = RandomStream(cfg.seed).derive(0x1417);
  m.net.init(init);
  return m;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double accuracy = 0;
};

struct TrainReport {
  CnnConfig config;
  std::vector<EpochLog> epochs;
  std::optional<Metrics> test;
  double wall_seconds = 0;
};

struct TrainOptions {
  // Optional explicit sample order for every epoch (overrides the shuffle
  // drawn from the stream). Used to replay a run on reordered data.
  std::vector<std::vector<std::size_t>> epoch_orders;
  std::function<void(const EpochLog&)> on_epoch;
};

// Mini-batch Adam on softmax cross-entropy. Inputs are standardized with
// model.scaler before training; shuffling and dropout draw from `stream`.
inline TrainReport train(CnnModel& model, std::span<const FixedSequence> data, RandomStream& stream,
                         const TrainOptions& opts = {}) {
  const auto& cfg = model.config;
  if (data.empty()) throw InvalidArgument("cnn train: empty training set");
  if (cfg.batch_size == 0) throw InvalidArgument("cnn train: batch size must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<FixedSequence> scaled;
  scaled.reserve(data.size());
  std::vector<int> labels;
  for (const auto& s : data) {
    if (s.user_id < 0 || s.user_id >= model.num_users) throw InvalidArgument("cnn train: label out of range");
    scaled.push_back(model.scaler.apply(s));
    labels.push_back(s.user_id);
  }

  TrainReport report;
  report.config = cfg;
  nn::Adam adam({cfg.lr, cfg.beta1, 0.999, 1e-8});
  auto params = model.net.params();
  ConvNet::Cache cache;
  const std::size_t n = scaled.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order;
    if (static_cast<std::size_t>(epoch) < opts.epoch_orders.size()) {
      order = opts.epoch_orders[static_cast<std::size_t>(epoch)];
      if (order.size() != n) throw InvalidArgument("cnn train: epoch order has wrong length");
    } else {
      order = stream.permutation(n);
    }
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
      const auto x = stack(scaled, idx);
      std::vector<int> y(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) y[b] = labels[idx[b]];
      nn::zero_grads(params);
      const auto logits = model.net.forward(x, stream, true, cache);
      auto loss = nn::softmax_xent(logits, y);
      if (!std::isfinite(loss.loss))
        throw NumericError("cnn train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch starting at " + std::to_string(start));
      model.net.backward(cache, loss.grad);
      adam.step(params);
      loss_sum += loss.loss * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const double* row = logits.sample(b);
        if (std::max_element(row, row + logits.channels) - row == y[b]) ++correct;
      }
    }
    EpochLog log{epoch + 1, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
    report.epochs.push_back(log);
    if (opts.on_epoch) opts.on_epoch(log);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;  // softmax of the class scores
};

inline std::vector<Prediction> predict_all(const CnnModel& model, std::span<const FixedSequence> seqs,
                                           std::size_t batch = 64) {
  std::vector<Prediction> out;
  out.reserve(seqs.size());
  std::vector<FixedSequence> scaled;
  for (std::size_t start = 0; start < seqs.size(); start += batch) {
    const std::size_t end = std::min(seqs.size(), start + batch);
    scaled.clear();
    for (std::size_t i = start; i < end; ++i) scaled.push_back(model.scaler.apply(seqs[i]));
    std::vector<std::size_t> idx(scaled.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto logits = model.net.infer(stack(scaled, idx));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const std::span<const double> row(logits.sample(b), logits.channels);
      Prediction p;
      p.label = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      p.probabilities = nn::softmax(row);
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline Prediction predict(const CnnModel& model, const FixedSequence& x) {
  return predict_all(model, std::span<const FixedSequence>(&x, 1)).front();
}

inline Metrics evaluate(const CnnModel& model, std::span<const FixedSequence> test) {
  const auto preds = predict_all(model, test);
  std::vector<int> truth, guess;
  for (std::size_t i = 0; i < test.size(); ++i) {
    truth.push_back(test[i].user_id);
    guess.push_back(preds[i].label);
  }
  return tagd::evaluate(truth, guess, static_cast<std::size_t>(model.num_users));
}

// Fits the standardizer on `train`, builds, trains and evaluates on `test`.
inline std::pair<CnnModel, TrainReport> fit(const CnnConfig& cfg, int num_users, std::span<const FixedSequence> train_set,
                                            std::span<const FixedSequence> test_set, const TrainOptions& opts = {},
                                            const Standardizer* scaler = nullptr) {
  auto model = build(cfg, num_users, train_set.front().length);
  model.scaler = scaler ? *scaler : fit_standardizer(train_set);
  RandomStream stream = RandomStream(cfg.seed).derive(0x7a1);
  auto report = train(model, train_set, stream, opts);
  if (!test_set.empty()) report.test = evaluate(model, test_set);
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Kernel/stride sweep

struct SweepCell {
  std::size_t kernel = 0, stride = 0;
  TrainReport report;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= n || error) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

// Full kernel x stride cross product, one run per cell with the same seed.
inline std::vector<SweepCell> sweep(std::span<const FixedSequence> train_set, std::span<const FixedSequence> test_set,
                                    int num_users, std::span<const std::size_t> kernels,
                                    std::span<const std::size_t> strides, const CnnConfig& base, std::size_t jobs = 1) {
  std::vector<SweepCell> cells;
  for (auto s : strides)
    for (auto k : kernels) cells.push_back({k, s, {}});
  // shape errors surface before any training starts
  for (const auto& c : cells) {
    auto cfg = base;
    cfg.kernel = c.kernel;
    cfg.stride = c.stride;
    shape_for(cfg, train_set.front().length);
  }
  const auto scaler = fit_standardizer(train_set);
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    auto cfg = base;
    cfg.kernel = cells[i].kernel;
    cfg.stride = cells[i].stride;
    cells[i].report = fit(cfg, num_users, train_set, test_set, {}, &scaler).second;
  });
  return cells;
}

// Accuracy grid: one row per stride, one column per kernel.
inline void write_sweep_grid_csv(std::ostream& out, std::span<const SweepCell> cells) {
  std::vector<std::size_t> ks, ss;
  for (const auto& c : cells) {
    if (std::find(ks.begin(), ks.end(), c.kernel) == ks.end()) ks.push_back(c.kernel);
    if (std::find(ss.begin(), ss.end(), c.stride) == ss.end()) ss.push_back(c.stride);
  }
  out.precision(10);
  out << "stride";
  for (auto k : ks) out << ",kernel_" << k;
  out << '\n';
  for (auto s : ss) {
    out << s;
    for (auto k : ks) {
      out << ',';
      for (const auto& c : cells)
        if (c.kernel == k && c.stride == s && c.report.test) out << c.report.test->accuracy;
    }
    out << '\n';
  }
}

inline void write_sweep_long_csv(std::ostream& out, std::span<const SweepCell> cells) {
  out.precision(10);
  out << "kernel,stride,accuracy,far,frr,final_train_loss\n";
  for (const auto& c : cells) {
    out << c.kernel << ',' << c.stride << ',';
    if (c.report.test) out << c.report.test->accuracy << ',' << c.report.test->far << ',' << c.report.test->frr;
    else out << ",,";
    out << ',' << (c.report.epochs.empty() ? 0.0 : c.report.epochs.back().loss) << '\n';
  }
}

inline void write_epoch_csv(std::ostream& out, const TrainReport& r) {
  out.precision(10);
  out << "epoch,loss,train_accuracy\n";
  for (const auto& e : r.epochs) out << e.epoch << ',' << e.loss << ',' << e.accuracy << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints (NN v1 container)

inline void put_config(nn::Checkpoint& ck, const CnnConfig& c, const std::string& prefix = "") {
  auto put = [&](const std::string& k, const auto& v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    ck.meta.emplace_back(prefix + k, s.str());
  };
  put("kernel", c.kernel);
  put("stride", c.stride);
  put("filters1", c.filters1);
  put("filters2", c.filters2);
  put("dropout", c.dropout);
  put("hidden", c.hidden);
  put("pool", c.pool);
  put("epochs", c.epochs);
  put("batch_size", c.batch_size);
  put("lr", c.lr);
  put("beta1", c.beta1);
  put("seed", c.seed);
}

inline CnnConfig get_config(const nn::Checkpoint& ck, const std::string& prefix = "") {
  CnnConfig c;
  auto get = [&](const std::string& k, auto& v) {
    std::istringstream s(ck.meta_value(prefix + k));
    if (!(s >> v)) throw DataError("NN checkpoint: bad value for " + prefix + k);
  };
  get("kernel", c.kernel);
  get("stride", c.stride);
  get("filters1", c.filters1);
  get("filters2", c.filters2);
  get("dropout", c.dropout);
  get("hidden", c.hidden);
  get("pool", c.pool);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("seed", c.seed);
  return c;
}

inline void put_net(nn::Checkpoint& ck, const ConvNet& net, const std::string& prefix = "") {
  const auto ps = net.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ck.tensors.emplace_back(prefix + ConvNet::param_names()[i], std::vector<double>(ps[i]->value.begin(), ps[i]->value.end()));
}

inline void get_net(const nn::Checkpoint& ck, ConvNet& net, const std::string& prefix = "") {
  auto ps = net.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto name = prefix + ConvNet::param_names()[i];
    nn::load_into(*ps[i], ck.tensor(name), name);
  }
}

inline void save_model(std::ostream& out, const CnnModel& m) {
  nn::Checkpoint ck;
  ck.meta.emplace_back("model", "cnn-classifier");
  ck.meta.emplace_back("num_users", std::to_string(m.num_users));
  ck.meta.emplace_back("input_length", std::to_string(m.net.shape().input_length));
  put_config(ck, m.config);
  ck.tensors.emplace_back("scaler.mean", m.scaler.mean);
  ck.tensors.emplace_back("scaler.std", m.scaler.stddev);
  put_net(ck, m.net);
  nn::write_checkpoint(out, ck);
}

inline CnnModel load_model(std::istream& in) {
  const auto ck = nn::read_checkpoint(in);
  if (ck.meta_value("model") != "cnn-classifier") throw DataError("NN checkpoint: not a cnn-classifier");
  auto m = build(get_config(ck), std::stoi(ck.meta_value("num_users")), std::stoul(ck.meta_value("input_length")));
  m.scaler.mean = ck.tensor("scaler.mean");
  m.scaler.stddev = ck.tensor("scaler.std");
  if (m.scaler.mean.size() != kAxes || m.scaler.stddev.size() != kAxes) throw DataError("NN checkpoint: bad scaler");
  m.scaler.degenerate.assign(kAxes, false);
  get_net(ck, m.net);
  return m;
}

inline void save_model(const std::filesystem::path& path, const CnnModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  save_model(out, m);
}

inline CnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return load_model(in);
}

}  // namespace tagd::cnn

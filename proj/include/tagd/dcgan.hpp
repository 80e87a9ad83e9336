#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tagd/cnn.hpp"
#include "tagd/core.hpp"
#include "tagd/ingest.hpp"
#include "tagd/metrics.hpp"
#include "tagd/nn.hpp"
#include "tagd/preprocess.hpp"

namespace tagd::gan {

struct UpsampleLayer {
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t channels = 0;  // output channels
};

struct GanConfig {
  std::size_t noise_dim = 100;
  // dense noise -> base_length x base_channels, then one transposed conv per
  // entry in `upsample`, each cropped to exactly stride x its input length.
  std::size_t base_length = 50;
  std::size_t base_channels = 64;
  std::vector<UpsampleLayer> upsample = {{4, 2, 32}, {4, 2, 16}, {4, 2, kAxes}};
  std::size_t seq_length = kSequenceLength;
  // Discriminator: the classifier stack with a single sigmoid output. Its
  // epochs/batch/lr/seed fields are unused; the GAN fields below apply.
  cnn::CnnConfig discriminator{};
  int epochs = 50;
  std::size_t batch_size = 32;
  double lr = 2e-4;
  double beta1 = 0.5;
  double real_label = 0.9;  // discriminator target for real samples (< 1 for one-sided smoothing)
  std::uint64_t seed = 0;
};

struct UpsampleStage {
  std::size_t in_length = 0, full_length = 0, crop_front = 0, out_length = 0;
};

// Lengths through the generator. The transposed conv overhang
// (full - stride*in) is cropped symmetrically, extra element at the back.
inline std::vector<UpsampleStage> generator_stages(const GanConfig& cfg) {
  if (cfg.upsample.empty()) throw InvalidArgument("gan: generator needs at least one transposed conv");
  if (cfg.noise_dim == 0 || cfg.base_length == 0 || cfg.base_channels == 0) throw InvalidArgument("gan: noise_dim and base shape must be positive");
  std::vector<UpsampleStage> stages;
  std::size_t len = cfg.base_length;
  for (const auto& l : cfg.upsample) {
    if (l.kernel < l.stride) throw InvalidArgument("gan: transposed conv kernel must be at least its stride");
    UpsampleStage s;
    s.in_length = len;
    s.full_length = nn::conv_transpose_output_length(len, l.kernel, l.stride);
    s.out_length = len * l.stride;
    s.crop_front = (s.full_length - s.out_length) / 2;
    stages.push_back(s);
    len = s.out_length;
  }
  if (len != cfg.seq_length)
    throw InvalidArgument("gan: generator schedule produces length " + std::to_string(len) + ", expected " + std::to_string(cfg.seq_length));
  if (cfg.upsample.back().channels != kAxes) throw InvalidArgument("gan: generator must end with 3 channels");
  return stages;
}

// noise -> dense -> ReLU -> [transposed conv -> crop -> ReLU]* -> tanh on the last stage
class Generator {
 public:
  struct Cache {
    nn::Tensor3 z, fc;                       // fc: ReLU output reshaped to (B, base_length, base_channels)
    std::vector<nn::Tensor3> inputs, full;  // per stage: input, uncropped output
    std::vector<nn::Tensor3> act;           // per stage: activation output
  };

  Generator() = default;
  explicit Generator(const GanConfig& cfg) : cfg_(cfg), stages_(generator_stages(cfg)), fc_(cfg.noise_dim, cfg.base_length * cfg.base_channels) {
    std::size_t ch = cfg.base_channels;
    for (const auto& l : cfg.upsample) {
      ups_.emplace_back(l.kernel, l.stride, ch, l.channels);
      ch = l.channels;
    }
  }

  void init(RandomStream& stream) {
    fc_.init(stream);
    for (auto& u : ups_) u.init(stream);
  }

  const GanConfig& config() const { return cfg_; }
  std::size_t noise_dim() const { return cfg_.noise_dim; }

  nn::Tensor3 forward(const nn::Tensor3& z, Cache& c) const {
    if (z.length * z.channels != cfg_.noise_dim) throw InvalidArgument("generator: noise width mismatch");
    c.z = z;
    c.fc = nn::relu_forward(nn::dense_forward(z, fc_)).reshaped(cfg_.base_length, cfg_.base_channels);
    c.inputs.clear();
    c.full.clear();
    c.act.clear();
    const nn::Tensor3* x = &c.fc;
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      c.inputs.push_back(*x);
      c.full.push_back(nn::conv1d_transpose_forward(*x, ups_[i]));
      auto cropped = nn::crop_forward(c.full.back(), stages_[i].crop_front, stages_[i].out_length);
      c.act.push_back(i + 1 == ups_.size() ? nn::tanh_forward(std::move(cropped)) : nn::relu_forward(std::move(cropped)));
      x = &c.act.back();
    }
    return c.act.back();
  }

  nn::Tensor3 generate(const nn::Tensor3& z) const {
    Cache c;
    return forward(z, c);
  }

  // Accumulates parameter gradients from dL/d(output); returns dL/dz.
  nn::Tensor3 backward(const Cache& c, const nn::Tensor3& dout) {
    nn::Tensor3 g = dout;
    for (std::size_t i = ups_.size(); i-- > 0;) {
      g = i + 1 == ups_.size() ? nn::tanh_backward(c.act[i], std::move(g)) : nn::relu_backward(c.act[i], std::move(g));
      g = nn::crop_backward(c.full[i], g, stages_[i].crop_front);
      g = nn::conv1d_transpose_backward(c.inputs[i], g, ups_[i]);
    }
    g = nn::relu_backward(c.fc, std::move(g));
    g = std::move(g).reshaped(1, cfg_.base_length * cfg_.base_channels);
    return nn::dense_backward(c.z, g, fc_);
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> p = {&fc_.weight, &fc_.bias};
    for (auto& u : ups_) {
      p.push_back(&u.weight);
      p.push_back(&u.bias);
    }
    return p;
  }
  std::vector<const nn::Param*> params() const {
    auto p = const_cast<Generator*>(this)->params();
    return {p.begin(), p.end()};
  }
  std::vector<std::string> param_names() const {
    std::vector<std::string> names = {"gen.fc.w", "gen.fc.b"};
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      names.push_back("gen.up" + std::to_string(i) + ".w");
      names.push_back("gen.up" + std::to_string(i) + ".b");
    }
    return names;
  }

 private:
  GanConfig cfg_;
  std::vector<UpsampleStage> stages_;
  nn::DenseParams fc_;
  std::vector<nn::ConvTransposeParams> ups_;
};

inline nn::Tensor3 sample_noise(std::size_t n, std::size_t dim, RandomStream& stream) {
  nn::Tensor3 z(n, 1, dim);
  for (auto& v : z.data) v = stream.normal();
  return z;
}

inline cnn::ConvNet make_discriminator(const GanConfig& cfg) { return cnn::ConvNet(cfg.discriminator, cfg.seq_length, kAxes, 1); }

struct EpochCurve {
  int epoch = 0;
  double d_loss = 0;      // real + fake BCE, mean over batches
  double g_loss = 0;      // non-saturating generator BCE
  double d_accuracy = 0;  // discriminator accuracy on the real and fake halves
};

struct GanModel {
  GanConfig config;
  Generator generator;
  cnn::ConvNet discriminator;
  Standardizer scaler = Standardizer::identity(kAxes);  // maps g-units to generator space
};

struct GanResult {
  GanModel model;
  std::vector<EpochCurve> curves;
  std::map<int, Generator> checkpoints;  // generator snapshots keyed by epoch
};

inline GanModel build(const GanConfig& cfg) {
  GanModel m{cfg, Generator(cfg), make_discriminator(cfg), Standardizer::identity(kAxes)};
  RandomStream init = RandomStream(cfg.seed).derive(0x6a7);
  m.generator.init(init);
  m.discriminator.init(init);
  return m;
}

// Discriminator accuracy at threshold 0.5 over `real` (label 1) and `fake`
// (label 0), both already in generator space.
inline double discriminator_accuracy(const cnn::ConvNet& d, const nn::Tensor3& real, const nn::Tensor3& fake) {
  std::size_t correct = 0;
  const auto pr = nn::sigmoid_forward(d.infer(real));
  const auto pf = nn::sigmoid_forward(d.infer(fake));
  for (double p : pr.data) correct += p > 0.5;
  for (double p : pf.data) correct += p <= 0.5;
  return static_cast<double>(correct) / static_cast<double>(pr.size() + pf.size());
}

// The classifier's standardizer with each axis further divided by the largest
// |z-score| seen in `real`, so real training data lies inside the tanh range.
inline Standardizer generator_space(std::span<const FixedSequence> real, const Standardizer& scaler) {
  Standardizer out = scaler;
  std::array<double, kAxes> peak{1.0, 1.0, 1.0};
  for (const auto& s : real) {
    const auto z = scaler.apply(s);
    for (std::size_t i = 0; i < z.data.size(); ++i) peak[i % kAxes] = std::max(peak[i % kAxes], std::abs(z.data[i]));
  }
  for (std::size_t a = 0; a < kAxes; ++a) out.stddev[a] *= peak[a];
  return out;
}

struct GanTrainOptions {
  std::vector<int> checkpoint_epochs;  // 0 allowed: the untrained generator
  std::function<void(const EpochCurve&)> on_epoch;
};

// Alternating updates per batch: the discriminator on real -> 1, fake -> 0,
// then the generator on fresh fakes -> 1 through the (frozen) discriminator.
// `real` is in g-units; it is standardized with `scaler` (fitted on the
// classifier's training split) before training.
inline GanResult train_gan(std::span<const FixedSequence> real, const GanConfig& cfg, const Standardizer& scaler,
                           RandomStream& stream, const GanTrainOptions& opts = {}) {
  if (real.size() < cfg.batch_size || cfg.batch_size == 0)
    throw InvalidArgument("gan: need at least batch_size (" + std::to_string(cfg.batch_size) + ") real samples");
  GanResult result{build(cfg), {}, {}};
  auto& model = result.model;
  model.scaler = generator_space(real, scaler);
  std::vector<FixedSequence> data;
  data.reserve(real.size());
  for (const auto& s : real) {
    if (s.length != cfg.seq_length) throw InvalidArgument("gan: real sample length does not match seq_length");
    data.push_back(model.scaler.apply(s));
  }

  auto snapshot = [&](int epoch) {
    if (std::find(opts.checkpoint_epochs.begin(), opts.checkpoint_epochs.end(), epoch) != opts.checkpoint_epochs.end())
      result.checkpoints[epoch] = model.generator;
  };
  snapshot(0);

  nn::Adam opt_d({cfg.lr, cfg.beta1, 0.999, 1e-8});
  nn::Adam opt_g({cfg.lr, cfg.beta1, 0.999, 1e-8});
  auto pd = model.discriminator.params();
  auto pg = model.generator.params();
  cnn::ConvNet::Cache dc_real, dc_fake;
  Generator::Cache gc;
  const std::size_t n = data.size();
  const std::size_t bs = cfg.batch_size;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = stream.permutation(n);
    EpochCurve curve{epoch, 0, 0, 0};
    std::size_t batches = 0, correct = 0, judged = 0;
    // full batches only, so every discriminator step sees equal real/fake halves
    for (std::size_t start = 0; start + bs <= n; start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, bs);
      const auto x_real = cnn::stack(data, idx);

      // discriminator step
      const auto x_fake = model.generator.generate(sample_noise(bs, cfg.noise_dim, stream));
      nn::zero_grads(pd);
      const auto z_real = model.discriminator.forward(x_real, stream, true, dc_real);
      const std::vector<double> real_target(bs, cfg.real_label), ones(bs, 1.0), zeros(bs, 0.0);
      auto l_real = nn::bce_with_logits(z_real, real_target);
      model.discriminator.backward(dc_real, l_real.grad);
      const auto z_fake = model.discriminator.forward(x_fake, stream, true, dc_fake);
      auto l_fake = nn::bce_with_logits(z_fake, zeros);
      model.discriminator.backward(dc_fake, l_fake.grad);
      opt_d.step(pd);
      for (double z : z_real.data) correct += z > 0.0;
      for (double z : z_fake.data) correct += z <= 0.0;
      judged += 2 * bs;

      // generator step
      nn::zero_grads(pg);
      const auto fake = model.generator.forward(sample_noise(bs, cfg.noise_dim, stream), gc);
      const auto z_gen = model.discriminator.forward(fake, stream, true, dc_fake);
      auto l_gen = nn::bce_with_logits(z_gen, ones);
      const auto dfake = model.discriminator.backward(dc_fake, l_gen.grad, true);
      model.generator.backward(gc, dfake);
      opt_g.step(pg);

      const double d_loss = l_real.loss + l_fake.loss;
      if (!std::isfinite(d_loss) || !std::isfinite(l_gen.loss)) {
        std::string dump;
        for (const auto& c : result.curves) dump += " [" + std::to_string(c.epoch) + ": d=" + std::to_string(c.d_loss) + " g=" + std::to_string(c.g_loss) + "]";
        throw NumericError("gan: non-finite loss at epoch " + std::to_string(epoch) + "; curves so far:" + dump);
      }
      curve.d_loss += d_loss;
      curve.g_loss += l_gen.loss;
      ++batches;
    }
    curve.d_loss /= static_cast<double>(batches);
    curve.g_loss /= static_cast<double>(batches);
    curve.d_accuracy = static_cast<double>(correct) / static_cast<double>(judged);
    result.curves.push_back(curve);
    if (opts.on_epoch) opts.on_epoch(curve);
    snapshot(epoch);
  }
  return result;
}

// n samples from n independent noise draws, mapped back to g-units.
inline std::vector<FixedSequence> generate(const Generator& g, const Standardizer& scaler, std::size_t n,
                                           RandomStream& stream, std::size_t batch = 64) {
  std::vector<FixedSequence> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t m = std::min(batch, n - start);
    const auto x = g.generate(sample_noise(m, g.noise_dim(), stream));
    for (std::size_t b = 0; b < m; ++b) {
      FixedSequence s(0, x.length);
      std::copy(x.sample(b), x.sample(b) + x.length * x.channels, s.data.begin());
      out.push_back(scaler.inverse(std::move(s)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral flatness proxy

// Wiener entropy of the mean-removed power spectrum (bins 1..N/2) of one
// channel: geometric mean over arithmetic mean, in (0, 1]. Near 1 for white
// noise, near 0 for a few dominant tones.
inline double spectral_flatness(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) throw InvalidArgument("spectral_flatness: need at least 4 samples");
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  const std::size_t bins = n / 2;
  std::vector<std::complex<double>> twiddle(n);
  for (std::size_t k = 0; k < n; ++k)
    twiddle[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  double log_sum = 0, sum = 0;
  constexpr double floor = 1e-300;
  for (std::size_t f = 1; f <= bins; ++f) {
    std::complex<double> acc(0, 0);
    for (std::size_t t = 0; t < n; ++t) acc += (x[t] - mean) * twiddle[(f * t) % n];
    const double p = std::norm(acc) + floor;
    log_sum += std::log(p);
    sum += p;
  }
  const double b = static_cast<double>(bins);
  return std::exp(log_sum / b) / (sum / b);
}

// Mean spectral flatness over samples and axes.
inline double mean_spectral_flatness(std::span<const FixedSequence> seqs) {
  if (seqs.empty()) throw InvalidArgument("mean_spectral_flatness: no sequences");
  double total = 0;
  std::vector<double> axis;
  for (const auto& s : seqs) {
    axis.resize(s.length);
    for (std::size_t a = 0; a < kAxes; ++a) {
      for (std::size_t t = 0; t < s.length; ++t) axis[t] = s.at(t, a);
      total += spectral_flatness(axis);
    }
  }
  return total / static_cast<double>(seqs.size() * kAxes);
}

// |flatness(fakes) - flatness(real)|: smaller means the fakes' spectra look
// more like the real data's.
inline double spectral_distance(std::span<const FixedSequence> fakes, std::span<const FixedSequence> real) {
  return std::abs(mean_spectral_flatness(fakes) - mean_spectral_flatness(real));
}

// ---------------------------------------------------------------------------
// Poisoning

enum class LabelPolicy { UniformRandom, SingleVictim, PerUserGan };

inline LabelPolicy parse_label_policy(const std::string& s) {
  if (s == "uniform" || s == "uniform-random") return LabelPolicy::UniformRandom;
  if (s == "victim" || s == "single-victim") return LabelPolicy::SingleVictim;
  if (s == "per-user" || s == "per-user-gan") return LabelPolicy::PerUserGan;
  throw InvalidArgument("unknown label policy '" + s + "'");
}

struct PoisonSpec {
  std::size_t n_adversarial = 0;
  int gan_epochs = 50;
  LabelPolicy label_policy = LabelPolicy::UniformRandom;
  int victim = 0;  // SingleVictim only
  std::uint64_t seed = 0;
};

struct PoisonReport {
  std::size_t n_adversarial = 0;
  int gan_epochs = 0;
  double baseline_accuracy = 0;
  Metrics poisoned;
};

// Labels for n fakes under the uniform or single-victim policies.
inline std::vector<int> poison_labels(const PoisonSpec& spec, int num_users, std::size_t n, RandomStream& stream) {
  std::vector<int> labels(n, spec.victim);
  if (spec.label_policy == LabelPolicy::SingleVictim) {
    if (spec.victim < 0 || spec.victim >= num_users) throw InvalidArgument("poison: victim out of range");
    return labels;
  }
  for (auto& l : labels) l = static_cast<int>(stream.index(static_cast<std::size_t>(num_users)));
  return labels;
}

// Retrains the classifier from scratch on every real training sample plus the
// labelled fakes and evaluates on the real test split. The standardizer is
// the one fitted on the real training split, so n = 0 reproduces the clean
// baseline exactly.
inline PoisonReport poison_attack(std::span<const FixedSequence> train_real, std::span<const FixedSequence> test,
                                  int num_users, std::span<const FixedSequence> labelled_fakes, const PoisonSpec& spec,
                                  const cnn::CnnConfig& cnn_cfg, double baseline_accuracy) {
  std::vector<FixedSequence> poisoned(train_real.begin(), train_real.end());
  poisoned.insert(poisoned.end(), labelled_fakes.begin(), labelled_fakes.end());
  const auto scaler = fit_standardizer(train_real);
  PoisonReport r;
  r.n_adversarial = labelled_fakes.size();
  r.gan_epochs = spec.gan_epochs;
  r.baseline_accuracy = baseline_accuracy;
  r.poisoned = *cnn::fit(cnn_cfg, num_users, poisoned, test, {}, &scaler).second.test;
  return r;
}

inline double clean_baseline(std::span<const FixedSequence> train_real, std::span<const FixedSequence> test, int num_users,
                             const cnn::CnnConfig& cnn_cfg) {
  const auto scaler = fit_standardizer(train_real);
  return cnn::fit(cnn_cfg, num_users, train_real, test, {}, &scaler).second.test->accuracy;
}

struct PoisonGrid {
  double baseline_accuracy = 0;
  Metrics baseline;
  std::vector<PoisonReport> cells;  // epochs-major, in the order given
};

// Poisoning grid: one GAN run (per user for PerUserGan) snapshotted at
// every requested epoch count, then one poisoned retrain per (n, epochs).
inline PoisonGrid poison_grid(std::span<const FixedSequence> train_real, std::span<const FixedSequence> test,
                              int num_users, const GanConfig& gan_cfg, std::span<const std::size_t> n_list,
                              std::span<const int> epoch_list, const cnn::CnnConfig& cnn_cfg,
                              LabelPolicy policy = LabelPolicy::UniformRandom, int victim = 0, std::size_t jobs = 1,
                              std::uint64_t seed = 0) {
  const auto scaler = fit_standardizer(train_real);
  PoisonGrid grid;
  {
    auto [m, rep] = cnn::fit(cnn_cfg, num_users, train_real, test, {}, &scaler);
    grid.baseline = *rep.test;
    grid.baseline_accuracy = rep.test->accuracy;
  }
  const int max_epochs = epoch_list.empty() ? 0 : *std::max_element(epoch_list.begin(), epoch_list.end());
  GanConfig gcfg = gan_cfg;
  gcfg.epochs = max_epochs;
  GanTrainOptions gopts;
  gopts.checkpoint_epochs.assign(epoch_list.begin(), epoch_list.end());

  // generators[u] holds the snapshots for user u (or one shared entry)
  std::vector<std::map<int, Generator>> generators;
  const RandomStream root(seed);
  if (policy == LabelPolicy::PerUserGan) {
    for (int u = 0; u < num_users; ++u) {
      std::vector<FixedSequence> mine;
      for (const auto& s : train_real)
        if (s.user_id == u) mine.push_back(s);
      GanConfig ucfg = gcfg;
      ucfg.batch_size = std::min(gcfg.batch_size, mine.size());
      ucfg.seed = RandomStream::mix(gcfg.seed + static_cast<std::uint64_t>(u));
      auto stream = root.derive(0x9a0000ULL + static_cast<std::uint64_t>(u));
      generators.push_back(train_gan(mine, ucfg, scaler, stream, gopts).checkpoints);
    }
  } else {
    auto stream = root.derive(0x9a0000ULL);
    generators.push_back(train_gan(train_real, gcfg, scaler, stream, gopts).checkpoints);
  }

  for (int e : epoch_list)
    for (std::size_t n : n_list) grid.cells.push_back({n, e, grid.baseline_accuracy, {}});

  cnn::parallel_for(grid.cells.size(), jobs, [&](std::size_t i) {
    auto& cell = grid.cells[i];
    PoisonSpec spec{cell.n_adversarial, cell.gan_epochs, policy, victim, seed};
    auto stream = root.derive((static_cast<std::uint64_t>(cell.gan_epochs) << 32) | cell.n_adversarial);
    std::vector<FixedSequence> fakes;
    if (policy == LabelPolicy::PerUserGan) {
      for (std::size_t j = 0; j < cell.n_adversarial; ++j) {
        const int u = static_cast<int>(j % static_cast<std::size_t>(num_users));
        auto one = generate(generators[static_cast<std::size_t>(u)].at(cell.gan_epochs), scaler, 1, stream);
        one.front().user_id = u;
        fakes.push_back(std::move(one.front()));
      }
    } else {
      fakes = generate(generators.front().at(cell.gan_epochs), scaler, cell.n_adversarial, stream);
      const auto labels = poison_labels(spec, num_users, fakes.size(), stream);
      for (std::size_t j = 0; j < fakes.size(); ++j) fakes[j].user_id = labels[j];
    }
    cell = poison_attack(train_real, test, num_users, fakes, spec, cnn_cfg, grid.baseline_accuracy);
  });
  return grid;
}

// Accuracy grid: one row per fake count, one column per GAN epoch count.
inline void write_poison_grid_csv(std::ostream& out, const PoisonGrid& g) {
  std::vector<std::size_t> ns;
  std::vector<int> es;
  for (const auto& c : g.cells) {
    if (std::find(ns.begin(), ns.end(), c.n_adversarial) == ns.end()) ns.push_back(c.n_adversarial);
    if (std::find(es.begin(), es.end(), c.gan_epochs) == es.end()) es.push_back(c.gan_epochs);
  }
  out.precision(10);
  out << "adversarial_samples";
  for (int e : es) out << ",epochs_" << e;
  out << '\n';
  for (auto n : ns) {
    out << n;
    for (int e : es) {
      out << ',';
      for (const auto& c : g.cells)
        if (c.n_adversarial == n && c.gan_epochs == e) out << c.poisoned.accuracy;
    }
    out << '\n';
  }
}

inline void write_poison_long_csv(std::ostream& out, const PoisonGrid& g) {
  out.precision(10);
  out << "n_adversarial,gan_epochs,baseline_accuracy,accuracy,far,frr,accuracy_drop\n";
  for (const auto& c : g.cells)
    out << c.n_adversarial << ',' << c.gan_epochs << ',' << c.baseline_accuracy << ',' << c.poisoned.accuracy << ','
        << c.poisoned.far << ',' << c.poisoned.frr << ',' << c.baseline_accuracy - c.poisoned.accuracy << '\n';
}

// ---------------------------------------------------------------------------
// Evasion

struct EvasionReport {
  double threshold = 0.5;
  std::size_t fakes = 0;
  std::vector<std::size_t> histogram;          // predicted-class counts
  std::vector<double> acceptance;              // fraction of fakes classified as each user
  std::vector<double> confident_acceptance;    // ... with softmax confidence >= threshold
  double evasion_success = 0;                  // max confident acceptance over users
};

// Presents forged samples to a trained classifier and measures how often each
// user would accept them.
inline EvasionReport evasion_attack(const cnn::CnnModel& model, std::span<const FixedSequence> fakes,
                                    double threshold = 0.5) {
  EvasionReport r;
  r.threshold = threshold;
  r.fakes = fakes.size();
  const auto users = static_cast<std::size_t>(model.num_users);
  r.histogram.assign(users, 0);
  r.acceptance.assign(users, 0.0);
  r.confident_acceptance.assign(users, 0.0);
  if (fakes.empty()) return r;
  std::vector<std::size_t> confident(users, 0);
  for (const auto& p : cnn::predict_all(model, fakes)) {
    const auto u = static_cast<std::size_t>(p.label);
    ++r.histogram[u];
    if (p.probabilities[u] >= threshold) ++confident[u];
  }
  const auto n = static_cast<double>(fakes.size());
  for (std::size_t u = 0; u < users; ++u) {
    r.acceptance[u] = static_cast<double>(r.histogram[u]) / n;
    r.confident_acceptance[u] = static_cast<double>(confident[u]) / n;
  }
  r.evasion_success = *std::max_element(r.confident_acceptance.begin(), r.confident_acceptance.end());
  return r;
}

inline void write_evasion_csv(std::ostream& out, const EvasionReport& r) {
  out.precision(10);
  out << "user,predicted_count,acceptance,confident_acceptance\n";
  for (std::size_t u = 0; u < r.histogram.size(); ++u)
    out << u << ',' << r.histogram[u] << ',' << r.acceptance[u] << ',' << r.confident_acceptance[u] << '\n';
  out << "max,," << (r.acceptance.empty() ? 0.0 : *std::max_element(r.acceptance.begin(), r.acceptance.end())) << ','
      << r.evasion_success << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_generator(std::ostream& out, const Generator& g, const Standardizer& scaler, int epoch) {
  nn::Checkpoint ck;
  const auto& c = g.config();
  ck.meta.emplace_back("model", "dcgan-generator");
  ck.meta.emplace_back("epoch", std::to_string(epoch));
  ck.meta.emplace_back("noise_dim", std::to_string(c.noise_dim));
  ck.meta.emplace_back("base_length", std::to_string(c.base_length));
  ck.meta.emplace_back("base_channels", std::to_string(c.base_channels));
  ck.meta.emplace_back("seq_length", std::to_string(c.seq_length));
  std::string sched;
  for (const auto& l : c.upsample) sched += std::to_string(l.kernel) + ":" + std::to_string(l.stride) + ":" + std::to_string(l.channels) + " ";
  ck.meta.emplace_back("upsample", sched);
  ck.tensors.emplace_back("scaler.mean", scaler.mean);
  ck.tensors.emplace_back("scaler.std", scaler.stddev);
  const auto ps = g.params();
  const auto names = g.param_names();
  for (std::size_t i = 0; i < ps.size(); ++i) ck.tensors.emplace_back(names[i], std::vector<double>(ps[i]->value.begin(), ps[i]->value.end()));
  nn::write_checkpoint(out, ck);
}

struct LoadedGenerator {
  Generator generator;
  Standardizer scaler;
  int epoch = 0;
};

inline LoadedGenerator load_generator(std::istream& in) {
  const auto ck = nn::read_checkpoint(in);
  if (ck.meta_value("model") != "dcgan-generator") throw DataError("NN checkpoint: not a dcgan-generator");
  GanConfig c;
  c.noise_dim = std::stoul(ck.meta_value("noise_dim"));
  c.base_length = std::stoul(ck.meta_value("base_length"));
  c.base_channels = std::stoul(ck.meta_value("base_channels"));
  c.seq_length = std::stoul(ck.meta_value("seq_length"));
  c.upsample.clear();
  std::istringstream sched(ck.meta_value("upsample"));
  std::string item;
  while (sched >> item) {
    UpsampleLayer l;
    char c1 = 0, c2 = 0;
    std::istringstream is(item);
    if (!(is >> l.kernel >> c1 >> l.stride >> c2 >> l.channels) || c1 != ':' || c2 != ':') throw DataError("NN checkpoint: bad upsample schedule");
    c.upsample.push_back(l);
  }
  LoadedGenerator out{Generator(c), Standardizer::identity(kAxes), std::stoi(ck.meta_value("epoch"))};
  out.scaler.mean = ck.tensor("scaler.mean");
  out.scaler.stddev = ck.tensor("scaler.std");
  if (out.scaler.mean.size() != kAxes || out.scaler.stddev.size() != kAxes) throw DataError("NN checkpoint: bad scaler");
  auto ps = out.generator.params();
  const auto names = out.generator.param_names();
  for (std::size_t i = 0; i < ps.size(); ++i) nn::load_into(*ps[i], ck.tensor(names[i]), names[i]);
  return out;
}

// Writes each sequence as <dir>/<prefix><index>.csv in the ingest CSV schema.
inline void export_csv(const std::filesystem::path& dir, std::span<const FixedSequence> seqs, const std::string& prefix = "fake_",
                       const CsvLayout& layout = {}) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    GestureSample g;
    g.user_id = seqs[i].user_id;
    g.seq.resize(seqs[i].length);
    for (std::size_t t = 0; t < seqs[i].length; ++t)
      for (std::size_t a = 0; a < kAxes; ++a) g.seq[t][a] = seqs[i].at(t, a);
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.csv", i);
    std::ofstream out(dir / (prefix + name));
    if (!out) throw DataError("cannot write " + (dir / (prefix + name)).string());
    write_csv(out, g, layout);
  }
}

}  // namespace tagd::gan

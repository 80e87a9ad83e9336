#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tagd/error.hpp"

namespace tagd {

inline constexpr std::size_t kAxes = 3;
inline constexpr std::size_t kSequenceLength = 400;
inline constexpr std::size_t kFeatureCount = 16;

using Accel = std::array<double, kAxes>;

// Seeded source of uniform and standard-normal deviates. Every stochastic
// operation in the library takes one of these explicitly.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw InvalidArgument("RandomStream::index: empty range");
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return unit_(engine_) < p; }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Fisher-Yates with our own index draw so the result does not depend on
    // the standard library's shuffle implementation.
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[index(i)]);
    return order;
  }

  // Independent child stream keyed by (seed, tag). Does not advance this stream.
  RandomStream derive(std::uint64_t tag) const { return RandomStream(mix(seed_ ^ mix(tag + 0x632be59bd9b4e019ULL))); }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline RandomStream rng(std::uint64_t seed) { return RandomStream(seed); }

struct GestureSample {
  int user_id = 0;
  std::vector<Accel> seq;
  double sample_rate_hz = 100.0;

  std::size_t length() const { return seq.size(); }

  void validate() const {
    if (seq.size() < 2) throw DataError("gesture sample shorter than 2 rows (user " + std::to_string(user_id) + ")");
    if (!(sample_rate_hz > 0.0)) throw DataError("sample rate must be positive");
    for (const auto& row : seq)
      for (double v : row)
        if (!std::isfinite(v)) throw DataError("non-finite acceleration value (user " + std::to_string(user_id) + ")");
  }

  bool operator==(const GestureSample&) const = default;
};

// 400x3 (by default) resampled sequence, row-major: data[t * 3 + axis].
struct FixedSequence {
  int user_id = 0;
  std::size_t length = kSequenceLength;
  std::vector<double> data = std::vector<double>(kSequenceLength * kAxes, 0.0);

  FixedSequence() = default;
  FixedSequence(int user, std::size_t len) : user_id(user), length(len), data(len * kAxes, 0.0) {}

  double& at(std::size_t t, std::size_t axis) { return data[t * kAxes + axis]; }
  double at(std::size_t t, std::size_t axis) const { return data[t * kAxes + axis]; }

  bool operator==(const FixedSequence&) const = default;
};

// (L, mean xyz, median xyz, std xyz, kurtosis xyz, skewness xyz)
struct FeatureVector {
  int user_id = 0;
  std::array<double, kFeatureCount> values{};

  bool operator==(const FeatureVector&) const = default;
};

inline const std::array<const char*, kFeatureCount>& feature_names() {
  static const std::array<const char*, kFeatureCount> names = {
      "L",       "mu_x",    "mu_y",    "mu_z",   "m_x",    "m_y",    "m_z",    "sigma_x",
      "sigma_y", "sigma_z", "k_x",     "k_y",    "k_z",    "s_x",    "s_y",    "s_z"};
  return names;
}

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<GestureSample> samples, int num_users) : samples_(std::move(samples)), num_users_(num_users) {
    if (num_users_ <= 0) throw DataError("dataset needs a positive user count");
    counts_.assign(static_cast<std::size_t>(num_users_), 0);
    for (const auto& s : samples_) {
      if (s.user_id < 0 || s.user_id >= num_users_)
        throw DataError("label " + std::to_string(s.user_id) + " outside [0, " + std::to_string(num_users_) + ")");
      s.validate();
      ++counts_[static_cast<std::size_t>(s.user_id)];
    }
  }

  const std::vector<GestureSample>& samples() const { return samples_; }
  int num_users() const { return num_users_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const GestureSample& operator[](std::size_t i) const { return samples_[i]; }

  std::size_t count_for(int user) const { return counts_.at(static_cast<std::size_t>(user)); }
  const std::vector<std::size_t>& counts() const { return counts_; }

  bool operator==(const Dataset& o) const { return num_users_ == o.num_users_ && samples_ == o.samples_; }

 private:
  std::vector<GestureSample> samples_;
  int num_users_ = 0;
  std::vector<std::size_t> counts_;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Number of training samples a user with n samples contributes. Always leaves
// at least one sample on each side.
inline std::size_t stratified_train_count(std::size_t n, double train_fraction) {
  auto k = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

// Per-user stratified split. Output partitions preserve the input order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw InvalidArgument("train_fraction must lie in (0, 1)");
  const auto users = static_cast<std::size_t>(ds.num_users());
  std::vector<std::vector<std::size_t>> by_user(users);
  for (std::size_t i = 0; i < ds.size(); ++i) by_user[static_cast<std::size_t>(ds[i].user_id)].push_back(i);

  std::vector<char> in_train(ds.size(), 0);
  RandomStream root(spec.seed);
  for (std::size_t u = 0; u < users; ++u) {
    const auto& idx = by_user[u];
    if (idx.size() < 2)
      throw DataError("user " + std::to_string(u) + " has " + std::to_string(idx.size()) +
                      " sample(s); a split needs at least 2");
    auto stream = root.derive(u);
    auto order = stream.permutation(idx.size());
    const auto k = stratified_train_count(idx.size(), spec.train_fraction);
    for (std::size_t j = 0; j < k; ++j) in_train[idx[order[j]]] = 1;
  }

  std::vector<GestureSample> train, test;
  for (std::size_t i = 0; i < ds.size(); ++i) (in_train[i] ? train : test).push_back(ds[i]);
  return {Dataset(std::move(train), ds.num_users()), Dataset(std::move(test), ds.num_users())};
}

}  // namespace tagd

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "tagd/core.hpp"

namespace tagd {

// Piecewise-linear resampling onto target_len evenly spaced index positions
// i*(L-1)/(T-1). Both endpoints are reproduced exactly.
inline FixedSequence resample(const GestureSample& s, std::size_t target_len = kSequenceLength) {
  const std::size_t len = s.seq.size();
  if (len < 2) throw InvalidArgument("resample: sequence needs at least 2 rows");
  if (target_len < 2) throw InvalidArgument("resample: target length must be at least 2");
  FixedSequence out(s.user_id, target_len);
  const std::size_t den = target_len - 1;
  for (std::size_t i = 0; i < target_len; ++i) {
    const std::size_t num = i * (len - 1);
    const std::size_t lo = num / den;
    const std::size_t rem = num % den;
    for (std::size_t a = 0; a < kAxes; ++a) {
      if (rem == 0) {
        out.at(i, a) = s.seq[lo][a];
      } else {
        const double frac = static_cast<double>(rem) / static_cast<double>(den);
        const double v0 = s.seq[lo][a], v1 = s.seq[lo + 1][a];
        out.at(i, a) = v0 + frac * (v1 - v0);
      }
    }
  }
  return out;
}

inline std::vector<FixedSequence> resample_all(const Dataset& ds, std::size_t target_len = kSequenceLength) {
  std::vector<FixedSequence> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples()) out.push_back(resample(s, target_len));
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of empty range");
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

struct AxisMoments {
  double mean = 0, median = 0, stddev = 0, kurtosis = 0, skewness = 0;
};

// Sample standard deviation uses n-1; kurtosis and skewness divide the central
// moment sums by n * sigma^4 and n * sigma^3 with that same sigma.
inline AxisMoments axis_moments(std::span<const double> x) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2) throw InvalidArgument("axis_moments: need at least 2 values");
  AxisMoments m;
  for (double v : x) m.mean += v;
  m.mean /= n;
  double s2 = 0, s3 = 0, s4 = 0;
  for (double v : x) {
    const double d = v - m.mean;
    s2 += d * d;
    s3 += d * d * d;
    s4 += d * d * d * d;
  }
  m.stddev = std::sqrt(s2 / (n - 1.0));
  if (!(m.stddev > 0.0)) throw DataError("degenerate signal: zero variance on an axis, kurtosis and skewness undefined");
  m.kurtosis = s4 / (n * std::pow(m.stddev, 4));
  m.skewness = s3 / (n * std::pow(m.stddev, 3));
  m.median = median(std::vector<double>(x.begin(), x.end()));
  return m;
}

// Statistical features of the raw (not resampled) signature.
inline FeatureVector features(const GestureSample& s) {
  if (s.seq.size() < 2) throw InvalidArgument("features: sequence needs at least 2 rows");
  FeatureVector f;
  f.user_id = s.user_id;
  f.values[0] = static_cast<double>(s.seq.size());
  std::vector<double> axis(s.seq.size());
  for (std::size_t a = 0; a < kAxes; ++a) {
    for (std::size_t i = 0; i < s.seq.size(); ++i) axis[i] = s.seq[i][a];
    const auto m = axis_moments(axis);
    f.values[1 + a] = m.mean;
    f.values[4 + a] = m.median;
    f.values[7 + a] = m.stddev;
    f.values[10 + a] = m.kurtosis;
    f.values[13 + a] = m.skewness;
  }
  return f;
}

inline std::vector<FeatureVector> features_all(const Dataset& ds) {
  std::vector<FeatureVector> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples()) out.push_back(features(s));
  return out;
}

inline void write_features_csv(std::ostream& out, std::span<const FeatureVector> rows) {
  for (const char* name : feature_names()) out << name << ',';
  out << "user_id\n";
  out.precision(17);
  for (const auto& r : rows) {
    for (double v : r.values) out << v << ',';
    out << r.user_id << '\n';
  }
}

// Column-wise z-scoring. For feature vectors there is one column per feature;
// for fixed sequences one column per axis, pooled over all time steps.
// Zero-variance columns are flagged and passed through untouched.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> degenerate;

  std::size_t dims() const { return mean.size(); }
  bool empty() const { return mean.empty(); }

  void check(std::size_t d) const {
    if (d != dims())
      throw InvalidArgument("standardizer dimension mismatch: fitted " + std::to_string(dims()) + ", got " +
                            std::to_string(d));
  }

  FeatureVector apply(FeatureVector f) const {
    check(f.values.size());
    for (std::size_t j = 0; j < dims(); ++j) f.values[j] = (f.values[j] - mean[j]) / stddev[j];
    return f;
  }
  FeatureVector inverse(FeatureVector f) const {
    check(f.values.size());
    for (std::size_t j = 0; j < dims(); ++j) f.values[j] = f.values[j] * stddev[j] + mean[j];
    return f;
  }
  FixedSequence apply(FixedSequence s) const {
    check(kAxes);
    for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = (s.data[i] - mean[i % kAxes]) / stddev[i % kAxes];
    return s;
  }
  FixedSequence inverse(FixedSequence s) const {
    check(kAxes);
    for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] = s.data[i] * stddev[i % kAxes] + mean[i % kAxes];
    return s;
  }

  template <typename Row>
  std::vector<Row> apply_all(std::span<const Row> rows) const {
    std::vector<Row> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(apply(r));
    return out;
  }

  static Standardizer identity(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0), std::vector<bool>(d, false)}; }
};

namespace detail {

// css holds the centred sums of squares.
inline Standardizer finish_standardizer(std::vector<double> sum, std::vector<double> css, double n) {
  Standardizer st;
  const std::size_t d = sum.size();
  st.mean.resize(d);
  st.stddev.resize(d);
  st.degenerate.assign(d, false);
  for (std::size_t j = 0; j < d; ++j) {
    st.mean[j] = sum[j] / n;
    const double var = css[j] / n;
    st.stddev[j] = std::sqrt(var);
    if (!(st.stddev[j] > 1e-12 * std::max(1.0, std::abs(st.mean[j])))) {
      st.degenerate[j] = true;
      st.mean[j] = 0.0;
      st.stddev[j] = 1.0;
    }
  }
  return st;
}

}  // namespace detail

// Population (n-denominator) statistics, so the fitted rows come out with
// unit standard deviation under the same convention.
inline Standardizer fit_standardizer(std::span<const FeatureVector> rows) {
  if (rows.empty()) throw InvalidArgument("fit_standardizer: no rows");
  std::vector<double> sum(kFeatureCount, 0.0), css(kFeatureCount, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < kFeatureCount; ++j) sum[j] += r.values[j];
  const auto n = static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      const double d = r.values[j] - sum[j] / n;
      css[j] += d * d;
    }
  return detail::finish_standardizer(std::move(sum), std::move(css), n);
}

inline Standardizer fit_standardizer(std::span<const FixedSequence> rows) {
  if (rows.empty()) throw InvalidArgument("fit_standardizer: no rows");
  std::vector<double> sum(kAxes, 0.0), css(kAxes, 0.0);
  double n = 0;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.data.size(); ++i) sum[i % kAxes] += r.data[i];
    n += static_cast<double>(r.length);
  }
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.data.size(); ++i) {
      const double d = r.data[i] - sum[i % kAxes] / n;
      css[i % kAxes] += d * d;
    }
  return detail::finish_standardizer(std::move(sum), std::move(css), n);
}

}  // namespace tagd

#pragma once

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tagd/error.hpp"

namespace tagd {

// Rows are true classes, columns are predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n = 0) : n_(n), counts_(n * n, 0) {}

  std::size_t classes() const { return n_; }
  std::int64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  void add(std::size_t truth, std::size_t pred, std::int64_t count = 1) {
    if (truth >= n_ || pred >= n_) throw InvalidArgument("confusion matrix: label out of range");
    if (count < 0) throw InvalidArgument("confusion matrix: negative count");
    counts_[truth * n_ + pred] += count;
  }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::int64_t row_sum(std::size_t i) const {
    std::int64_t t = 0;
    for (std::size_t j = 0; j < n_; ++j) t += (*this)(i, j);
    return t;
  }
  std::int64_t col_sum(std::size_t j) const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += (*this)(i, j);
    return t;
  }
  std::int64_t trace() const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += (*this)(i, i);
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> truths, std::span<const int> predictions, std::size_t n) {
  if (truths.size() != predictions.size()) throw InvalidArgument("confusion: truth/prediction length mismatch");
  ConfusionMatrix cm(n);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] < 0 || predictions[i] < 0) throw InvalidArgument("confusion: negative label");
    cm.add(static_cast<std::size_t>(truths[i]), static_cast<std::size_t>(predictions[i]));
  }
  return cm;
}

struct ClassRates {
  std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
  std::optional<double> far;  // FP / (FP + TN)
  std::optional<double> frr;  // FN / (FN + TP)
};

enum class Averaging { Macro, Micro };

struct Metrics {
  double accuracy = 0;
  double far = 0;
  double frr = 0;
  std::vector<ClassRates> per_class;
  std::vector<std::string> warnings;
};

// Accuracy is trace/total. FAR and FRR are computed per class (one-vs-rest)
// and averaged without weights by default; classes whose rate has a zero
// denominator are left out of the mean and reported in warnings.
inline Metrics metrics(const ConfusionMatrix& cm, Averaging avg = Averaging::Macro) {
  Metrics m;
  const auto total = cm.total();
  if (total == 0) throw InvalidArgument("metrics: empty confusion matrix");
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

  double far_sum = 0, frr_sum = 0;
  std::size_t far_n = 0, frr_n = 0;
  std::int64_t fp_all = 0, neg_all = 0, fn_all = 0, pos_all = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    ClassRates r;
    r.tp = cm(i, i);
    r.fn = cm.row_sum(i) - r.tp;
    r.fp = cm.col_sum(i) - r.tp;
    r.tn = total - r.tp - r.fn - r.fp;
    if (r.fp + r.tn > 0) {
      r.far = static_cast<double>(r.fp) / static_cast<double>(r.fp + r.tn);
      far_sum += *r.far;
      ++far_n;
    } else {
      m.warnings.push_back("class " + std::to_string(i) + ": no negatives, FAR undefined");
    }
    if (r.fn + r.tp > 0) {
      r.frr = static_cast<double>(r.fn) / static_cast<double>(r.fn + r.tp);
      frr_sum += *r.frr;
      ++frr_n;
    } else {
      m.warnings.push_back("class " + std::to_string(i) + ": absent from truth, FRR undefined");
    }
    fp_all += r.fp;
    neg_all += r.fp + r.tn;
    fn_all += r.fn;
    pos_all += r.fn + r.tp;
    m.per_class.push_back(r);
  }
  if (avg == Averaging::Macro) {
    m.far = far_n ? far_sum / static_cast<double>(far_n) : 0.0;
    m.frr = frr_n ? frr_sum / static_cast<double>(frr_n) : 0.0;
  } else {
    m.far = neg_all ? static_cast<double>(fp_all) / static_cast<double>(neg_all) : 0.0;
    m.frr = pos_all ? static_cast<double>(fn_all) / static_cast<double>(pos_all) : 0.0;
  }
  return m;
}

inline Metrics evaluate(std::span<const int> truths, std::span<const int> predictions, std::size_t n,
                        Averaging avg = Averaging::Macro) {
  return metrics(confusion(truths, predictions, n), avg);
}

inline void write_metrics_csv(std::ostream& out, const Metrics& m) {
  out << std::setprecision(10);
  out << "class,tp,fn,fp,tn,far,frr\n";
  for (std::size_t i = 0; i < m.per_class.size(); ++i) {
    const auto& r = m.per_class[i];
    out << i << ',' << r.tp << ',' << r.fn << ',' << r.fp << ',' << r.tn << ',';
    if (r.far) out << *r.far;
    out << ',';
    if (r.frr) out << *r.frr;
    out << '\n';
  }
  out << "all,,,,," << m.far << ',' << m.frr << '\n';
  out << "accuracy,,,,," << m.accuracy << ",\n";
}

inline void print_metrics(std::ostream& out, const Metrics& m) {
  out << std::fixed << std::setprecision(5);
  out << "accuracy " << m.accuracy << "  FAR " << m.far << "  FRR " << m.frr << '\n';
  out << std::defaultfloat;
  for (const auto& w : m.warnings) out << "warning: " << w << '\n';
}

}  // namespace tagd

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tagd/core.hpp"
#include "tagd/metrics.hpp"

namespace tagd::svm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SvmOptions {
  double C = 1000.0;
  double tol = 1e-4;
  int max_iter = 1000;  // epochs over the data
};

// Hinge-loss SVM with the bias folded in as a constant-1 feature (so the bias
// is regularised together with w).
struct BinarySvm {
  Eigen::VectorXd w;
  double b = 0;
  Eigen::VectorXd alpha;
  int epochs = 0;
  bool converged = false;

  double decision(const Eigen::Ref<const Eigen::VectorXd>& x) const { return w.dot(x) + b; }
};

namespace detail {

inline void check_finite(const RowMatrix& X) {
  if (!X.allFinite()) throw InvalidArgument("svm: non-finite input");
}

}  // namespace detail

// 1/2 (|w|^2 + b^2) + C sum max(0, 1 - y (w.x + b))
inline double primal_objective(const BinarySvm& m, const RowMatrix& X, std::span<const int> y, double C) {
  double loss = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double margin = y[static_cast<std::size_t>(i)] * m.decision(X.row(i).transpose());
    loss += std::max(0.0, 1.0 - margin);
  }
  return 0.5 * (m.w.squaredNorm() + m.b * m.b) + C * loss;
}

// sum alpha - 1/2 |sum alpha_i y_i [x_i, 1]|^2
inline double dual_objective(const Eigen::VectorXd& alpha, const RowMatrix& X, std::span<const int> y) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(X.cols());
  double b = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double ay = alpha(i) * y[static_cast<std::size_t>(i)];
    w += ay * X.row(i).transpose();
    b += ay;
  }
  return alpha.sum() - 0.5 * (w.squaredNorm() + b * b);
}

// Dual coordinate descent on the box-constrained dual (0 <= alpha_i <= C),
// visiting coordinates in a fresh random order every epoch. Stops once the
// largest projected-gradient magnitude falls below tol.
inline BinarySvm train_binary(const RowMatrix& X, std::span<const int> y, const SvmOptions& opt, RandomStream& stream) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (y.size() != n) throw InvalidArgument("svm: label count does not match rows");
  if (!(opt.C > 0)) throw InvalidArgument("svm: C must be positive");
  detail::check_finite(X);
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1) pos = true;
    else if (v == -1) neg = true;
    else throw InvalidArgument("svm: binary labels must be +1 or -1");
  }
  if (!pos || !neg) throw InvalidArgument("svm: training data contains a single class");

  BinarySvm m;
  m.w = Eigen::VectorXd::Zero(X.cols());
  m.alpha = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd qdiag(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) qdiag(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(i)).squaredNorm() + 1.0;

  for (m.epochs = 0; m.epochs < opt.max_iter;) {
    const auto order = stream.permutation(n);
    double violation = 0;
    for (std::size_t k : order) {
      const auto i = static_cast<Eigen::Index>(k);
      const double yi = y[k];
      const double grad = yi * (m.w.dot(X.row(i).transpose()) + m.b) - 1.0;
      double& a = m.alpha(i);
      double pg = grad;
      if (a <= 0.0) pg = std::min(grad, 0.0);
      else if (a >= opt.C) pg = std::max(grad, 0.0);
      violation = std::max(violation, std::abs(pg));
      if (pg == 0.0) continue;
      const double next = std::clamp(a - grad / qdiag(i), 0.0, opt.C);
      const double step = (next - a) * yi;
      a = next;
      m.w += step * X.row(i).transpose();
      m.b += step;
    }
    ++m.epochs;
    if (violation < opt.tol) {
      m.converged = true;
      break;
    }
  }
  return m;
}

struct LinearSvmModel {
  double C = 1000.0;
  int num_classes = 0;
  std::size_t input_dims = 0;                // width of rows passed to predict
  std::vector<std::size_t> active_features;  // columns of the input actually used
  RowMatrix weights;                         // num_classes x active_features.size()
  Eigen::VectorXd bias;

  Eigen::VectorXd scores(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd sub(static_cast<Eigen::Index>(active_features.size()));
    for (std::size_t j = 0; j < active_features.size(); ++j) sub(static_cast<Eigen::Index>(j)) = x(static_cast<Eigen::Index>(active_features[j]));
    return weights * sub + bias;
  }

  // argmax of the class scores; ties go to the lowest class index
  int predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd s = scores(x);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.size(); ++c)
      if (s(c) > s(best)) best = c;
    return static_cast<int>(best);
  }

  std::vector<int> predict_all(const RowMatrix& X) const {
    std::vector<int> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) out[static_cast<std::size_t>(i)] = predict(X.row(i).transpose());
    return out;
  }
};

inline RowMatrix select_columns(const RowMatrix& X, std::span<const std::size_t> cols) {
  RowMatrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= static_cast<std::size_t>(X.cols())) throw InvalidArgument("svm: feature index out of range");
    out.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(cols[j]));
  }
  return out;
}

// One-vs-rest: class c against all others, one binary problem per class.
// Each binary solve draws its coordinate order from a stream derived from
// (stream seed, c), so the problems are independent of each other.
inline LinearSvmModel train_multiclass(const RowMatrix& X, std::span<const int> labels, int num_classes,
                                       const SvmOptions& opt, const RandomStream& stream,
                                       std::vector<std::size_t> active = {}) {
  if (num_classes < 2) throw InvalidArgument("svm: multiclass training needs at least 2 classes");
  if (labels.size() != static_cast<std::size_t>(X.rows())) throw InvalidArgument("svm: label count does not match rows");
  if (active.empty()) {
    active.resize(static_cast<std::size_t>(X.cols()));
    for (std::size_t j = 0; j < active.size(); ++j) active[j] = j;
  }
  LinearSvmModel model;
  model.C = opt.C;
  model.num_classes = num_classes;
  model.input_dims = static_cast<std::size_t>(X.cols());
  model.active_features = active;
  const RowMatrix Xa = select_columns(X, active);
  model.weights.resize(num_classes, Xa.cols());
  model.bias.resize(num_classes);

  std::vector<int> y(labels.size());
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes) throw InvalidArgument("svm: label out of range");
      y[i] = labels[i] == c ? 1 : -1;
    }
    auto s = stream.derive(static_cast<std::uint64_t>(c));
    BinarySvm bin;
    try {
      bin = train_binary(Xa, y, opt, s);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("svm class " + std::to_string(c) + ": " + e.what());
    }
    model.weights.row(c) = bin.w.transpose();
    model.bias(c) = bin.b;
  }
  return model;
}

inline RowMatrix to_matrix(std::span<const FeatureVector> rows) {
  RowMatrix X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < kFeatureCount; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i].values[j];
  return X;
}

inline std::vector<int> labels_of(std::span<const FeatureVector> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (const auto& r : rows) y.push_back(r.user_id);
  return y;
}

struct RfeStep {
  std::size_t active_count = 0;  // features in the model evaluated at this step
  std::size_t eliminated = 0;    // feature dropped after evaluation
  double accuracy = 0, far = 0, frr = 0;
};

struct RfeRanking {
  std::vector<std::size_t> elimination_order;  // first eliminated ... last survivor
  std::vector<RfeStep> steps;                  // one per elimination
  RfeStep final_model;                         // the single-survivor model (eliminated = survivor)
};

// Score of feature j is sum_c w_c[j]^2; the lowest-scoring feature (lowest
// index on ties) is dropped and the model retrained, until one remains.
// Each step's model is evaluated on (X_eval, y_eval).
inline RfeRanking rfe(const RowMatrix& X, std::span<const int> labels, const RowMatrix& X_eval,
                      std::span<const int> eval_labels, int num_classes, const SvmOptions& opt,
                      const RandomStream& stream) {
  if (X.cols() < 2) throw InvalidArgument("rfe: need at least 2 features");
  std::vector<std::size_t> active(static_cast<std::size_t>(X.cols()));
  for (std::size_t j = 0; j < active.size(); ++j) active[j] = j;

  auto evaluate_model = [&](const LinearSvmModel& m, RfeStep& step) {
    const auto pred = m.predict_all(X_eval);
    const auto met = evaluate(eval_labels, pred, static_cast<std::size_t>(num_classes));
    step.accuracy = met.accuracy;
    step.far = met.far;
    step.frr = met.frr;
  };

  RfeRanking out;
  while (true) {
    const auto model = train_multiclass(X, labels, num_classes, opt, stream, active);
    RfeStep step;
    step.active_count = active.size();
    evaluate_model(model, step);
    if (active.size() == 1) {
      step.eliminated = active.front();
      out.final_model = step;
      out.elimination_order.push_back(active.front());
      break;
    }
    std::size_t worst = 0;
    double worst_score = 0;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const double score = model.weights.col(static_cast<Eigen::Index>(j)).squaredNorm();
      if (j == 0 || score < worst_score || (score == worst_score && active[j] < active[worst])) {
        worst = j;
        worst_score = score;
      }
    }
    step.eliminated = active[worst];
    out.steps.push_back(step);
    out.elimination_order.push_back(active[worst]);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  return out;
}

inline void write_rfe_csv(std::ostream& out, const RfeRanking& r) {
  out.precision(10);
  out << "step,active_features,eliminated_feature,accuracy,far,frr\n";
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& s = r.steps[i];
    out << i + 1 << ',' << s.active_count << ',' << s.eliminated << ',' << s.accuracy << ',' << s.far << ',' << s.frr
        << '\n';
  }
}

// SVM v1
// classes <n> dims <input width> active <k> C <C>
// features <k active column indices>
// class <c> <bias> <k weights>      (one row per class)
inline void save_model(std::ostream& out, const LinearSvmModel& m) {
  out.precision(17);
  out << "SVM v1\n";
  out << "classes " << m.num_classes << " dims " << m.input_dims << " active " << m.active_features.size() << " C "
      << m.C << '\n';
  out << "features";
  for (auto j : m.active_features) out << ' ' << j;
  out << '\n';
  for (int c = 0; c < m.num_classes; ++c) {
    out << "class " << c << ' ' << m.bias(c);
    for (Eigen::Index j = 0; j < m.weights.cols(); ++j) out << ' ' << m.weights(c, j);
    out << '\n';
  }
}

inline LinearSvmModel load_model(std::istream& in) {
  auto fail = [](const std::string& what) { return DataError("SVM model file: " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "SVM v1") throw fail("bad magic line");
  LinearSvmModel m;
  std::string k1, k2, k3, k4;
  std::size_t active = 0;
  if (!std::getline(in, line)) throw fail("truncated");
  std::istringstream h(line);
  if (!(h >> k1 >> m.num_classes >> k2 >> m.input_dims >> k3 >> active >> k4 >> m.C) || k1 != "classes" ||
      k2 != "dims" || k3 != "active" || k4 != "C" || m.num_classes < 2)
    throw fail("bad header");
  if (!std::getline(in, line)) throw fail("truncated");
  std::istringstream f(line);
  if (!(f >> k1) || k1 != "features") throw fail("bad feature line");
  m.active_features.resize(active);
  for (auto& j : m.active_features)
    if (!(f >> j) || j >= m.input_dims) throw fail("bad feature index");
  m.weights.resize(m.num_classes, static_cast<Eigen::Index>(active));
  m.bias.resize(m.num_classes);
  for (int c = 0; c < m.num_classes; ++c) {
    if (!std::getline(in, line)) throw fail("truncated");
    std::istringstream r(line);
    int idx = -1;
    if (!(r >> k1 >> idx >> m.bias(c)) || k1 != "class" || idx != c) throw fail("bad class row");
    for (Eigen::Index j = 0; j < m.weights.cols(); ++j)
      if (!(r >> m.weights(c, j))) throw fail("short class row");
  }
  return m;
}

}  // namespace tagd::svm

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergepipe/dataset.hpp"
#include "mergepipe/error.hpp"

namespace mergepipe {

/// Positive class is label 1 (cancelled).
struct ConfusionMatrix {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Undefined (zero-denominator) metrics are empty optionals, never NaN.
struct ScalarMetrics {
  double accuracy = 0.0;
  std::optional<double> precision, recall, f1;
};

using CurvePoints = std::vector<std::pair<double, double>>;

struct EvalReport {
  double threshold = 0.5;
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::optional<double> precision, recall, f1;
  /// (fpr, tpr), from (0, 0) to (1, 1).
  CurvePoints roc_points;
  /// (recall, precision), one point per distinct score threshold.
  CurvePoints pr_points;
  std::optional<double> auroc, aupr;
};

enum class PrArea { step, trapezoidal };

inline ConfusionMatrix confusion_at(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores, double threshold) {
  require(labels.size() == scores.size(), ErrorKind::LengthMismatch, "labels and scores differ in length");
  ConfusionMatrix cm;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const bool actual = labels[i] > 0.5;
    const bool predicted = scores[i] >= threshold;
    if (actual) {
      predicted ? ++cm.tp : ++cm.fn;
    } else {
      predicted ? ++cm.fp : ++cm.tn;
    }
  }
  return cm;
}

inline ScalarMetrics scalar_metrics(const ConfusionMatrix& cm) {
  require(cm.total() > 0, ErrorKind::EmptyInput, "confusion matrix is empty");
  ScalarMetrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fp > 0) m.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  if (cm.tp + cm.fn > 0) m.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  return m;
}

namespace detail {

/// Cumulative (tp, fp) after each distinct score, visited from the highest.
struct Sweep {
  std::vector<std::pair<std::int64_t, std::int64_t>> counts;
  std::int64_t positives = 0, negatives = 0;
};

inline Sweep sweep(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores) {
  require(labels.size() == scores.size(), ErrorKind::LengthMismatch, "labels and scores differ in length");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(labels.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });
  Sweep s;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    labels[order[k]] > 0.5 ? ++tp : ++fp;
    if (k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]]) s.counts.emplace_back(tp, fp);
  }
  s.positives = tp;
  s.negatives = fp;
  return s;
}

}  // namespace detail

/// ROC over all distinct thresholds; area by the trapezoidal rule.
inline std::pair<CurvePoints, double> roc_curve(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores) {
  const auto s = detail::sweep(labels, scores);
  require(s.positives > 0 && s.negatives > 0, ErrorKind::SingleClass, "ROC needs both classes present");
  CurvePoints points{{0.0, 0.0}};
  double area = 0.0;
  for (const auto& [tp, fp] : s.counts) {
    const double fpr = static_cast<double>(fp) / static_cast<double>(s.negatives);
    const double tpr = static_cast<double>(tp) / static_cast<double>(s.positives);
    area += (fpr - points.back().first) * (tpr + points.back().second) * 0.5;
    points.emplace_back(fpr, tpr);
  }
  return {points, area};
}

/// PR points (recall, precision) over distinct thresholds. Step area is
/// sum_k (R_k - R_{k-1}) P_k with R_0 = 0.
inline std::pair<CurvePoints, double> pr_curve(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores,
                                               PrArea rule = PrArea::step) {
  const auto s = detail::sweep(labels, scores);
  require(s.positives > 0, ErrorKind::NoPositives, "PR curve needs at least one positive");
  CurvePoints points;
  double area = 0.0;
  double prev_recall = 0.0;
  double prev_precision = -1.0;
  for (const auto& [tp, fp] : s.counts) {
    const double recall = static_cast<double>(tp) / static_cast<double>(s.positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (rule == PrArea::step) {
      area += (recall - prev_recall) * precision;
    } else {
      const double left = prev_precision < 0.0 ? precision : prev_precision;
      area += (recall - prev_recall) * (precision + left) * 0.5;
    }
    prev_recall = recall;
    prev_precision = precision;
    points.emplace_back(recall, precision);
  }
  return {points, area};
}

/// Threshold metrics plus both curves. Curves and areas are omitted when
/// the labels do not contain the classes they need.
inline EvalReport evaluate(const Eigen::VectorXd& labels, const Eigen::VectorXd& scores, double threshold = 0.5,
                           PrArea rule = PrArea::step) {
  EvalReport r;
  r.threshold = threshold;
  r.confusion = confusion_at(labels, scores, threshold);
  const auto m = scalar_metrics(r.confusion);
  r.accuracy = m.accuracy;
  r.precision = m.precision;
  r.recall = m.recall;
  r.f1 = m.f1;
  const auto positives = r.confusion.tp + r.confusion.fn;
  const auto negatives = r.confusion.fp + r.confusion.tn;
  if (positives > 0 && negatives > 0) {
    auto [roc, auroc] = roc_curve(labels, scores);
    r.roc_points = std::move(roc);
    r.auroc = auroc;
  }
  if (positives > 0) {
    auto [pr, aupr] = pr_curve(labels, scores, rule);
    r.pr_points = std::move(pr);
    r.aupr = aupr;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
  j = nlohmann::json{{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  auto pts = [](const CurvePoints& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [x, y] : p) a.push_back({x, y});
    return a;
  };
  j = nlohmann::json{{"threshold", r.threshold},
                     {"confusion", r.confusion},
                     {"accuracy", r.accuracy},
                     {"precision", optional_json(r.precision)},
                     {"recall", optional_json(r.recall)},
                     {"f1", optional_json(r.f1)},
                     {"auroc", optional_json(r.auroc)},
                     {"aupr", optional_json(r.aupr)},
                     {"roc_points", pts(r.roc_points)},
                     {"pr_points", pts(r.pr_points)}};
}

inline void write_curve_csv(std::ostream& out, const CurvePoints& points, const std::string& x_name,
                            const std::string& y_name) {
  out << x_name << ',' << y_name << '\n';
  for (const auto& [x, y] : points) out << csv::format_double(x) << ',' << csv::format_double(y) << '\n';
}

}  // namespace mergepipe

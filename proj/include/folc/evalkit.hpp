#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "folc/data/dataset.hpp"

namespace folc::eval {

/// k x k counts, rows are the true class and columns the prediction.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k(classes), counts(classes * classes, 0) {}
  ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> c) : k(classes), counts(std::move(c)) {
    if (counts.size() != k * k) throw std::invalid_argument("confusion matrix needs k*k counts");
  }

  std::uint64_t& at(std::size_t t, std::size_t p) { return counts.at(t * k + p); }
  std::uint64_t at(std::size_t t, std::size_t p) const { return counts.at(t * k + p); }
  std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, i);
    return s;
  }
  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < k; ++j) s += at(i, j);
    return s;
  }
  std::uint64_t col_sum(std::size_t j) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k; ++i) s += at(i, j);
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.k != k) throw std::invalid_argument("confusion matrices of different size");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t k) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("confusion: length mismatch");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k || predictions[i] >= k)
      throw std::out_of_range("confusion: class index out of range at sample " + std::to_string(i));
    ++cm.at(labels[i], predictions[i]);
  }
  return cm;
}

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support() const { return tp + fn; }
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  std::optional<double> auc, ap;
  std::uint64_t samples = 0;
};

inline double safe_ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

/// One-vs-rest counts per class, macro averages, 0/0 taken as 0.
inline MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw std::invalid_argument("metrics: confusion matrix is empty");
  MetricsReport r;
  r.samples = n;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(n);
  for (std::size_t c = 0; c < cm.k; ++c) {
    ClassMetrics m;
    m.tp = cm.at(c, c);
    m.fp = cm.col_sum(c) - m.tp;
    m.fn = cm.row_sum(c) - m.tp;
    m.tn = n - m.tp - m.fp - m.fn;
    m.precision = safe_ratio(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fp));
    m.recall = safe_ratio(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fn));
    m.f1 = safe_ratio(2 * m.precision * m.recall, m.precision + m.recall);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(m);
  }
  const auto k = static_cast<double>(cm.k);
  r.macro_precision /= k;
  r.macro_recall /= k;
  r.macro_f1 /= k;
  return r;
}

/// Binary ROC-AUC as the Mann-Whitney statistic with average ranks for ties.
inline double roc_auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) rank_sum += avg_rank, ++pos;
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: labels contain a single class");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1) / 2) / (p * q);
}

/// Average precision sum_n (R_n - R_{n-1}) P_n over descending score
/// thresholds, tied scores forming one threshold.
inline double average_precision_binary(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("pr_ap: length mismatch");
  const auto total_pos = static_cast<std::size_t>(std::count_if(positive.begin(), positive.end(), [](auto v) { return v != 0; }));
  if (total_pos == 0) throw std::invalid_argument("pr_ap: no positive samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double ap = 0, prev_recall = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += positive[order[j]] != 0;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

namespace detail {

// Flattens n x k probability rows into n*k one-vs-rest binary decisions.
inline std::vector<std::uint8_t> one_vs_rest(std::span<const double> probs, std::span<const std::size_t> labels,
                                             std::size_t k) {
  if (k < 2 || probs.size() != labels.size() * k) throw std::invalid_argument("scores must be n x k with k >= 2");
  std::vector<std::uint8_t> pos(probs.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw std::out_of_range("label out of range");
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += probs[i * k + c];
    if (std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("probability row " + std::to_string(i) + " does not sum to 1");
    pos[i * k + labels[i]] = 1;
  }
  return pos;
}

}  // namespace detail

/// Micro-averaged one-vs-rest ROC-AUC over n x k probability rows.
inline double roc_auc(std::span<const double> probs, std::span<const std::size_t> labels, std::size_t k) {
  std::size_t first = labels.empty() ? 0 : labels[0];
  if (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == first; }))
    throw std::invalid_argument("roc_auc: labels contain a single class");
  const auto pos = detail::one_vs_rest(probs, labels, k);
  return roc_auc_binary(probs, pos);
}

inline double pr_ap(std::span<const double> probs, std::span<const std::size_t> labels, std::size_t k) {
  const auto pos = detail::one_vs_rest(probs, labels, k);
  return average_precision_binary(probs, pos);
}

struct CurvePoint {
  double threshold, x, y;
};

/// ROC points (fpr, tpr) and PR points (recall, precision) at each distinct
/// threshold of the micro-averaged scores.
inline std::pair<std::vector<CurvePoint>, std::vector<CurvePoint>> curves(std::span<const double> probs,
                                                                          std::span<const std::size_t> labels,
                                                                          std::size_t k) {
  const auto pos = detail::one_vs_rest(probs, labels, k);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return probs[a] > probs[b]; });
  const double P = static_cast<double>(labels.size()), N = static_cast<double>(probs.size()) - P;
  std::vector<CurvePoint> roc{{std::numeric_limits<double>::infinity(), 0, 0}}, pr;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) (pos[order[j]] ? tp : fp)++, ++j;
    const double t = probs[order[i]];
    roc.push_back({t, N > 0 ? static_cast<double>(fp) / N : 0.0, static_cast<double>(tp) / P});
    pr.push_back({t, static_cast<double>(tp) / P, static_cast<double>(tp) / static_cast<double>(tp + fp)});
    i = j;
  }
  return {roc, pr};
}

struct ChiSquare {
  double statistic;
  std::size_t dof;
};

/// Pearson statistic against counts expected from independent marginals.
inline ChiSquare chi_square(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n == 0) throw std::invalid_argument("chi_square: all-zero matrix");
  double stat = 0;
  for (std::size_t i = 0; i < cm.k; ++i)
    for (std::size_t j = 0; j < cm.k; ++j) {
      const double e = static_cast<double>(cm.row_sum(i)) * static_cast<double>(cm.col_sum(j)) / n;
      if (e > 0) {
        const double d = static_cast<double>(cm.at(i, j)) - e;
        stat += d * d / e;
      }
    }
  return {stat, (cm.k - 1) * (cm.k - 1)};
}

struct Predictions {
  std::vector<std::size_t> labels;
  std::vector<double> probs;  // n x k, may be empty
};

using Predictor = std::function<Predictions(const data::ImageSet&)>;

struct ScopeReport {
  std::string scope;
  ConfusionMatrix cm;
  MetricsReport metrics;
  ChiSquare chi2{0, 0};
  std::vector<CurvePoint> roc, pr;
};

inline ScopeReport report_for(const std::string& scope, const data::ImageSet& set, const Predictions& p) {
  std::vector<std::size_t> truth(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) truth[i] = set.images[i].label;
  ScopeReport r{scope, confusion(p.labels, truth, set.classes), {}, {}, {}, {}};
  r.metrics = metrics_from_confusion(r.cm);
  r.chi2 = chi_square(r.cm);
  if (!p.probs.empty()) {
    try {
      r.metrics.auc = roc_auc(p.probs, truth, set.classes);
      r.metrics.ap = pr_ap(p.probs, truth, set.classes);
      std::tie(r.roc, r.pr) = curves(p.probs, truth, set.classes);
    } catch (const std::invalid_argument&) {
      // A single-class subset has no ROC; the count metrics still stand.
    }
  }
  return r;
}

/// Scores one frozen model on the whole test set and on each view subset.
/// Empty view subsets are skipped with a warning.
inline std::vector<ScopeReport> per_view_report(const Predictor& predict, const data::ImageSet& test,
                                                std::vector<std::string>* warnings = nullptr) {
  if (test.empty()) throw std::invalid_argument("per_view_report: empty test set");
  std::vector<ScopeReport> out;
  out.push_back(report_for("all_views", test, predict(test)));
  for (data::View v : data::kViews) {
    auto subset = test.filter_view(v);
    if (subset.empty()) {
      if (warnings) warnings->push_back(std::string("view ") + data::to_string(v) + " has no test images; omitted");
      continue;
    }
    out.push_back(report_for(data::to_string(v), subset, predict(subset)));
  }
  return out;
}

inline nlohmann::json to_json(const ScopeReport& r, const std::vector<std::string>& class_names = {}) {
  auto name = [&](std::size_t c) { return c < class_names.size() ? class_names[c] : std::to_string(c); };
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.metrics.per_class.size(); ++c) {
    const auto& m = r.metrics.per_class[c];
    classes.push_back({{"class", name(c)}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                       {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}});
  }
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.cm.k; ++i) {
    std::vector<std::uint64_t> row(r.cm.counts.begin() + static_cast<std::ptrdiff_t>(i * r.cm.k),
                                   r.cm.counts.begin() + static_cast<std::ptrdiff_t>((i + 1) * r.cm.k));
    rows.push_back(row);
  }
  nlohmann::json j{{"scope", r.scope},
                   {"averaging", "macro"},
                   {"samples", r.metrics.samples},
                   {"accuracy", r.metrics.accuracy},
                   {"macro_precision", r.metrics.macro_precision},
                   {"macro_recall", r.metrics.macro_recall},
                   {"macro_f1", r.metrics.macro_f1},
                   {"per_class", classes},
                   {"confusion_rows_true_cols_pred", rows},
                   {"chi_square", {{"statistic", r.chi2.statistic}, {"dof", r.chi2.dof}}}};
  j["auc_micro"] = r.metrics.auc ? nlohmann::json(*r.metrics.auc) : nlohmann::json(nullptr);
  j["ap_micro"] = r.metrics.ap ? nlohmann::json(*r.metrics.ap) : nlohmann::json(nullptr);
  return j;
}

/// Long-form rows: scope,class,metric,value. Class "macro" holds averages.
inline void write_metrics_csv(std::ostream& os, const std::vector<ScopeReport>& reports,
                              const std::vector<std::string>& class_names = {}) {
  os << "scope,class,metric,value\n";
  os.precision(17);
  for (const auto& r : reports) {
    const auto& m = r.metrics;
    os << r.scope << ",all,accuracy," << m.accuracy << '\n';
    os << r.scope << ",macro,precision," << m.macro_precision << '\n';
    os << r.scope << ",macro,recall," << m.macro_recall << '\n';
    os << r.scope << ",macro,f1," << m.macro_f1 << '\n';
    if (m.auc) os << r.scope << ",micro,roc_auc," << *m.auc << '\n';
    if (m.ap) os << r.scope << ",micro,average_precision," << *m.ap << '\n';
    os << r.scope << ",all,chi_square," << r.chi2.statistic << '\n';
    os << r.scope << ",all,chi_square_dof," << r.chi2.dof << '\n';
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      os << r.scope << ',' << name << ",precision," << m.per_class[c].precision << '\n';
      os << r.scope << ',' << name << ",recall," << m.per_class[c].recall << '\n';
      os << r.scope << ',' << name << ",f1," << m.per_class[c].f1 << '\n';
    }
  }
}

}  // namespace folc::eval

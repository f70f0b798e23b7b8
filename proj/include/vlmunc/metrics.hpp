#pragma once

// Error-detection metrics. The positive class is a correct prediction (retain);
// errors are the negatives to reject.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlmunc/error.hpp"
#include "vlmunc/scorer.hpp"

namespace vlmunc {

inline constexpr double kDefaultTprTarget = 0.95;

struct ScoredSample {
  double confidence = 0.0;
  bool correct = false;
};

struct EvaluationReport {
  std::string method;
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr95 = 0.0;
  double accuracy = 0.0;
  std::vector<std::pair<double, double>> f1_curve;  // (tau, f1)
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

namespace detail {

struct Counts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline Counts count_classes(std::span<const ScoredSample> samples) {
  Counts c;
  for (const auto& s : samples) (s.correct ? c.positives : c.negatives)++;
  return c;
}

inline void require_both(const Counts& c, std::string_view what) {
  if (c.positives == 0 || c.negatives == 0) {
    throw Error(ErrorCode::SingleClassOnly, "metrics",
                std::string(what) + " needs at least one correct and one erroneous prediction");
  }
}

/// Samples sorted by descending confidence, cut into runs of equal confidence.
/// Each entry is the cumulative (tp, fp) after admitting one whole run.
inline std::vector<std::pair<std::size_t, std::size_t>> cumulative_by_threshold(std::span<const ScoredSample> samples) {
  std::vector<ScoredSample> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredSample& a, const ScoredSample& b) { return a.confidence > b.confidence; });
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].confidence == sorted[i].confidence) {
      (sorted[j].correct ? tp : fp)++;
      ++j;
    }
    out.emplace_back(tp, fp);
    i = j;
  }
  return out;
}

}  // namespace detail

/// Mann-Whitney AUC with average ranks: P(conf_correct > conf_error) + P(tie)/2.
inline double auroc(std::span<const ScoredSample> samples) {
  const auto counts = detail::count_classes(samples);
  detail::require_both(counts, "AuROC");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return samples[a].confidence < samples[b].confidence; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_run = 0;
    while (j < order.size() && samples[order[j]].confidence == samples[order[i]].confidence) {
      pos_in_run += samples[order[j]].correct;
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    positive_rank_sum += avg_rank * static_cast<double>(pos_in_run);
    i = j;
  }
  const double p = static_cast<double>(counts.positives);
  const double n = static_cast<double>(counts.negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Area under the precision-recall curve with step-wise interpolation:
/// sum over thresholds of (recall_i - recall_{i-1}) * precision_i.
inline double aupr(std::span<const ScoredSample> samples) {
  const auto counts = detail::count_classes(samples);
  if (counts.positives == 0) {
    throw Error(ErrorCode::NoPositives, "metrics", "AuPR needs at least one correct prediction");
  }
  const double p = static_cast<double>(counts.positives);
  double area = 0.0;
  double prev_recall = 0.0;
  for (const auto& [tp, fp] : detail::cumulative_by_threshold(samples)) {
    const double recall = static_cast<double>(tp) / p;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

/// Lowest FPR over thresholds whose TPR reaches `tpr_target`; a sample is retained
/// when confidence >= threshold.
inline double fpr_at_tpr(std::span<const ScoredSample> samples, double tpr_target = kDefaultTprTarget) {
  const auto counts = detail::count_classes(samples);
  detail::require_both(counts, "FPR@TPR");
  const double p = static_cast<double>(counts.positives);
  const double n = static_cast<double>(counts.negatives);
  double best = 1.0;
  for (const auto& [tp, fp] : detail::cumulative_by_threshold(samples)) {
    if (static_cast<double>(tp) / p >= tpr_target - 1e-12) best = std::min(best, static_cast<double>(fp) / n);
  }
  return best;
}

inline std::vector<double> default_tau_grid(std::size_t points = 101) {
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return grid;
}

/// F1 of "retain" (uncertainty 1 - confidence <= tau) against correctness, per tau.
inline std::vector<std::pair<double, double>> f1_sweep(std::span<const ScoredSample> samples, std::span<const double> taus) {
  std::vector<std::pair<double, double>> out;
  out.reserve(taus.size());
  for (double tau : taus) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& s : samples) {
      const bool retain = 1.0 - s.confidence <= tau;
      if (retain && s.correct) ++tp;
      else if (retain) ++fp;
      else if (s.correct) ++fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    out.emplace_back(tau, tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom);
  }
  return out;
}

inline double accuracy(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw Error(ErrorCode::EmptyInput, "metrics", "accuracy of zero predictions");
  const auto hits = std::count_if(predictions.begin(), predictions.end(), [](const Prediction& p) { return p.correct; });
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

/// Full report for one method's samples.
inline EvaluationReport evaluate(std::string method, std::span<const ScoredSample> samples,
                                 std::span<const double> taus) {
  EvaluationReport r;
  r.method = std::move(method);
  const auto counts = detail::count_classes(samples);
  r.positives = counts.positives;
  r.negatives = counts.negatives;
  r.auroc = auroc(samples);
  r.aupr = aupr(samples);
  r.fpr95 = fpr_at_tpr(samples);
  std::vector<Prediction> preds(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) preds[i].correct = samples[i].correct;
  r.accuracy = accuracy(preds);
  r.f1_curve = f1_sweep(samples, taus);
  return r;
}

/// Samples of one method pulled out of a mixed score list, in input order.
inline std::vector<ScoredSample> samples_for(std::span<const UncertaintyScore> scores, std::string_view method) {
  std::vector<ScoredSample> out;
  for (const auto& s : scores) {
    if (s.method == method) out.push_back({s.confidence, s.correct});
  }
  return out;
}

/// Method tags in first-appearance order.
inline std::vector<std::string> methods_in(std::span<const UncertaintyScore> scores) {
  std::vector<std::string> out;
  for (const auto& s : scores) {
    if (std::find(out.begin(), out.end(), s.method) == out.end()) out.push_back(s.method);
  }
  return out;
}

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["auroc"] = r.auroc;
  j["aupr"] = r.aupr;
  j["fpr95"] = r.fpr95;
  j["accuracy"] = r.accuracy;
  j["positives"] = r.positives;
  j["negatives"] = r.negatives;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [tau, f1] : r.f1_curve) curve.push_back({{"tau", tau}, {"f1", f1}});
  j["f1_curve"] = curve;
  return j;
}

/// Method rows x metric columns, values in percent.
inline std::string reports_table(std::span<const EvaluationReport> reports) {
  std::size_t width = 6;
  for (const auto& r : reports) width = std::max(width, r.method.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };
  char buf[96];
  std::snprintf(buf, sizeof buf, " %8s %8s %8s %7s\n", "AuROC", "AuPR", "FPR95", "Acc");
  std::string out = pad("Method") + "  " + buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, " %8.2f %8.2f %8.2f %7.2f\n", 100.0 * r.auroc, 100.0 * r.aupr, 100.0 * r.fpr95,
                  100.0 * r.accuracy);
    out += pad(r.method) + "  " + buf;
  }
  return out;
}

}  // namespace vlmunc

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/stats.hpp"

namespace histcode {

struct CurvePoint {
  double x = 0;  // fpr for ROC, recall for PR
  double y = 0;  // tpr for ROC, precision for PR
};

namespace detail {

inline void check_binary(const std::vector<int>& labels) {
  std::size_t pos = 0;
  for (int v : labels) {
    if (v != 0 && v != 1) throw Error("labels must be 0/1");
    pos += static_cast<std::size_t>(v);
  }
  if (pos == 0 || pos == labels.size())
    throw SingleClass("need both classes present");
}

}  // namespace detail

/// ROC-AUC via the midrank Mann-Whitney statistic; ties get half credit.
inline double roc_auc(const std::vector<int>& labels,
                      const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw DimensionMismatch("roc_auc length mismatch");
  detail::check_binary(labels);
  const std::vector<double> rank = midranks(scores);
  double r_pos = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) {
      r_pos += rank[i];
      ++n_pos;
    }
  const std::size_t n_neg = labels.size() - n_pos;
  double u = r_pos - 0.5 * static_cast<double>(n_pos) *
                         static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace detail {

// Indices sorted by descending score; equal scores form one threshold group.
inline std::vector<std::size_t> score_order(const std::vector<double>& s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return s[a] > s[b];
  });
  return order;
}

}  // namespace detail

/// ROC curve from (0,0) to (1,1), one point per distinct threshold.
inline std::vector<CurvePoint> roc_points(const std::vector<int>& labels,
                                          const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw DimensionMismatch("roc_points length mismatch");
  detail::check_binary(labels);
  const auto order = detail::score_order(scores);
  double n_pos = 0, n_neg = 0;
  for (int v : labels) (v == 1 ? n_pos : n_neg) += 1.0;
  std::vector<CurvePoint> out;
  out.push_back({0.0, 0.0});
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]])
      ++j;
    for (std::size_t t = i; t <= j; ++t)
      (labels[order[t]] == 1 ? tp : fp) += 1.0;
    out.push_back({fp / n_neg, tp / n_pos});
    i = j + 1;
  }
  return out;
}

/// Precision-recall curve; starts at recall 0 with the precision of the
/// first threshold group, ends at recall 1.
inline std::vector<CurvePoint> pr_points(const std::vector<int>& labels,
                                         const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw DimensionMismatch("pr_points length mismatch");
  detail::check_binary(labels);
  const auto order = detail::score_order(scores);
  double n_pos = 0;
  for (int v : labels) n_pos += (v == 1) ? 1.0 : 0.0;
  std::vector<CurvePoint> out;
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]])
      ++j;
    for (std::size_t t = i; t <= j; ++t)
      (labels[order[t]] == 1 ? tp : fp) += 1.0;
    double prec = tp / (tp + fp);
    if (out.empty()) out.push_back({0.0, prec});
    out.push_back({tp / n_pos, prec});
    i = j + 1;
  }
  return out;
}

/// Fraction of exact label matches.
inline double accuracy(const std::vector<int>& labels,
                       const std::vector<int>& predicted) {
  if (labels.size() != predicted.size())
    throw DimensionMismatch("accuracy length mismatch");
  if (labels.empty()) throw TooFewValues("accuracy of empty vectors");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == predicted[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Thresholds probability-like scores at 0.5 (argmax for two classes).
inline double accuracy_from_scores(const std::vector<int>& labels,
                                   const std::vector<double>& scores) {
  std::vector<int> pred(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    pred[i] = scores[i] >= 0.5 ? 1 : 0;
  return accuracy(labels, pred);
}

}  // namespace histcode

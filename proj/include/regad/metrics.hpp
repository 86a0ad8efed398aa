#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "regad/types.hpp"

namespace regad::metrics {

/// Area under the ROC curve: P(s_pos > s_neg) + ½P(s_pos = s_neg).
/// `labels` holds 0/1. Throws std::invalid_argument unless both classes occur.
template <typename Scalar>
double auc(std::span<const Scalar> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the count of correctly ordered pairs, ties contributing one.
  std::int64_t twice_pairs = 0;
  std::int64_t neg_below = 0;
  std::int64_t pos = 0;
  std::int64_t neg = 0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    std::int64_t grp_pos = 0;
    std::int64_t grp_neg = 0;
    while (hi < order.size() && scores[order[hi]] == scores[order[lo]]) {
      (labels[order[hi]] == 1 ? grp_pos : grp_neg) += 1;
      ++hi;
    }
    twice_pairs += grp_pos * (2 * neg_below + grp_neg);
    neg_below += grp_neg;
    pos += grp_pos;
    neg += grp_neg;
    lo = hi;
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("auc: needs both positive and negative labels");
  return static_cast<double>(twice_pairs) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Average precision: mean over positives of precision at that positive's
/// rank, ranking by descending score with ascending index on ties.
template <typename Scalar>
double aupr(std::span<const Scalar> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("aupr: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  double precision_sum = 0.0;
  std::int64_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] == 1) {
      ++tp;
      precision_sum += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  if (tp == 0) throw std::invalid_argument("aupr: needs at least one positive label");
  return precision_sum / static_cast<double>(tp);
}

inline double auc(const Vector& scores, const std::vector<int>& labels) {
  return auc<double>(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
}

inline double aupr(const Vector& scores, const std::vector<int>& labels) {
  return aupr<double>(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
}

/// AUC over nodes that carry a label; unlabeled nodes are skipped.
double auc_on_labeled(const Vector& scores, const LabelVector& labels);

struct MetricReport {
  double auc = 0.0;
  double aupr = 0.0;
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  std::string split;
};

/// AUC and AUPR of `scores` restricted to `nodes`, against 0/1 `truth`.
MetricReport evaluate(const Vector& scores, const std::vector<int>& truth, const NodeSet& nodes,
                      std::string split);

/// Observed labels after uniform label flipping.
struct NoisyLabels {
  LabelVector observed;
  NodeSet true_anomalies;   // labeled anomalous and truly anomalous
  NodeSet flipped;          // truly normal, labeled anomalous
  NodeSet labeled_normals;
};

struct NoiseConfig {
  int anomaly_budget = 30;        // labeled anomalies, true and flipped together
  double noise_ratio = 0.5;       // share of the budget filled by flipped normals
  int normal_multiplier = 10;     // labeled normals per labeled anomaly
};

/// Number of genuinely anomalous nodes among the labeled anomalies.
int correct_anomaly_count(int budget, double noise_ratio);

/// Draws the observed label table from clean 0/1 labels, choosing only among
/// `pool` nodes. Throws std::invalid_argument when the pool lacks the required
/// anomalies or normals.
NoisyLabels inject_label_noise(const std::vector<int>& clean, const NodeSet& pool, const NoiseConfig& cfg,
                               Rng& rng);

}  // namespace regad::metrics

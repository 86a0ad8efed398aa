#pragma once

#include <functional>
#include <vector>

#include "regad/detector.hpp"
#include "regad/types.hpp"

namespace regad::confidence {

using detector::ScoreVector;

/// High-confidence node sets at the extremes of the score ranking.
struct ConfidentSets {
  NodeSet anomalous;  // AS: highest scores
  NodeSet normal;     // NS: lowest scores
  double rate = 0.0;

  bool contains(NodeId v) const;
};

/// Set size ⌈rate·n⌉ for the given node count.
std::size_t confident_set_size(double rate, std::size_t n);

/// Ranks nodes by (score, id) ascending; NS is the head, AS the tail.
/// Throws std::invalid_argument for a rate outside (0, 0.5] or when the two
/// sets would overlap.
ConfidentSets select_confident_sets(const ScoreVector& scores, double rate);

/// Overwrites AS with anomalous and NS with normal labels; everything else
/// keeps its noisy label.
LabelVector rectify_labels(const LabelVector& noisy, const ConfidentSets& sets);

/// Nodes whose score lies in the closed interval [mean - delta, mean + delta],
/// excluding AS and NS.
NodeSet candidate_set(const ScoreVector& scores, double mean_score, double delta, const ConfidentSets& exclude);

/// Mean score over a freshly drawn balanced batch of `labels`.
double balanced_mean_score(const ScoreVector& scores, const LabelVector& labels, int batch_size, Rng& rng);

/// AUC of the candidates that carry a rectified label. When that subset does
/// not contain both classes, one anomalous and one normal node drawn from
/// outside the candidates are added first. Throws std::invalid_argument when
/// `rectified` lacks either class entirely.
double bandit_reward(const NodeSet& candidates, const ScoreVector& scores, const LabelVector& rectified, Rng& rng);

/// Seven evenly spaced thresholds over [0.1, 0.4].
std::vector<double> default_arm_grid();

struct BanditConfig {
  std::vector<double> arms = default_arm_grid();
  double epsilon = 0.2;
  int iterations = 100;
  /// Exploit and return the highest-mean arm instead of the lowest.
  bool maximize = false;
};

void validate(const BanditConfig& cfg);

struct BanditOutcome {
  std::size_t arm = 0;
  std::vector<double> means;
  std::vector<int> pulls;
};

/// ε-greedy over `arm_count` arms. Arms never pulled are tried first when
/// exploiting, in index order. Returns the arm with the best (by default the
/// lowest) mean reward; ties go to the lower index.
BanditOutcome run_epsilon_greedy(std::size_t arm_count, const std::function<double(std::size_t)>& reward,
                                 const BanditConfig& cfg, Rng& rng);

struct ThresholdChoice {
  double delta = 0.0;
  NodeSet candidates;
  BanditOutcome outcome;
};

/// Searches the threshold grid for the candidate set with the lowest AUC.
ThresholdChoice bandit_select_threshold(const ScoreVector& scores, double mean_score, const LabelVector& rectified,
                                        const ConfidentSets& sets, const BanditConfig& cfg, Rng& rng);

}  // namespace regad::confidence

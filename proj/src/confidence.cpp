#include "regad/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "regad/metrics.hpp"

namespace regad::confidence {

bool ConfidentSets::contains(NodeId v) const {
  return std::binary_search(anomalous.begin(), anomalous.end(), v) ||
         std::binary_search(normal.begin(), normal.end(), v);
}

std::size_t confident_set_size(double rate, std::size_t n) {
  // Guard against products such as 0.07 * 100 = 7.000000000000001.
  return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
}

ConfidentSets select_confident_sets(const ScoreVector& scores, double rate) {
  if (!(rate > 0.0 && rate <= 0.5)) throw std::invalid_argument("select_confident_sets: rate must lie in (0, 0.5]");
  const auto n = static_cast<std::size_t>(scores.size());
  const std::size_t k = confident_set_size(rate, n);
  if (2 * k > n) throw std::invalid_argument("select_confident_sets: confident sets would overlap");

  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  std::sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
  });
  ConfidentSets sets;
  sets.rate = rate;
  sets.normal.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  sets.anomalous.assign(order.end() - static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(sets.normal.begin(), sets.normal.end());
  std::sort(sets.anomalous.begin(), sets.anomalous.end());
  return sets;
}

LabelVector rectify_labels(const LabelVector& noisy, const ConfidentSets& sets) {
  LabelVector out = noisy;
  for (NodeId v : sets.normal) out.at(static_cast<std::size_t>(v)) = Label::Normal;
  for (NodeId v : sets.anomalous) out.at(static_cast<std::size_t>(v)) = Label::Anomaly;
  return out;
}

NodeSet candidate_set(const ScoreVector& scores, double mean_score, double delta, const ConfidentSets& exclude) {
  if (!(delta > 0.0)) throw std::invalid_argument("candidate_set: delta must be positive");
  NodeSet out;
  const double lo = mean_score - delta;
  const double hi = mean_score + delta;
  for (NodeId v = 0; v < static_cast<NodeId>(scores.size()); ++v) {
    if (scores[v] >= lo && scores[v] <= hi && !exclude.contains(v)) out.push_back(v);
  }
  return out;
}

double balanced_mean_score(const ScoreVector& scores, const LabelVector& labels, int batch_size, Rng& rng) {
  const std::vector<NodeId> batch = detector::sample_balanced_batch(labels, rng, batch_size);
  return scores.mean_over(batch);
}

double bandit_reward(const NodeSet& candidates, const ScoreVector& scores, const LabelVector& rectified, Rng& rng) {
  std::vector<double> s;
  std::vector<int> y;
  bool has_pos = false;
  bool has_neg = false;
  for (NodeId v : candidates) {
    const Label l = rectified.at(static_cast<std::size_t>(v));
    if (!is_labeled(l)) continue;
    s.push_back(scores[v]);
    y.push_back(l == Label::Anomaly ? 1 : 0);
    (l == Label::Anomaly ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) {
    NodeSet outside_pos, outside_neg, any_pos, any_neg;
    for (NodeId v = 0; v < static_cast<NodeId>(rectified.size()); ++v) {
      const Label l = rectified[static_cast<std::size_t>(v)];
      if (!is_labeled(l)) continue;
      const bool inside = std::binary_search(candidates.begin(), candidates.end(), v);
      NodeSet& any = l == Label::Anomaly ? any_pos : any_neg;
      NodeSet& outside = l == Label::Anomaly ? outside_pos : outside_neg;
      any.push_back(v);
      if (!inside) outside.push_back(v);
    }
    if (any_pos.empty() || any_neg.empty()) {
      throw std::invalid_argument("bandit_reward: rectified labels lack an anomalous or a normal node");
    }
    const NodeSet& pos_pool = outside_pos.empty() ? any_pos : outside_pos;
    const NodeSet& neg_pool = outside_neg.empty() ? any_neg : outside_neg;
    const NodeId a = pos_pool[uniform_index(rng, pos_pool.size())];
    const NodeId b = neg_pool[uniform_index(rng, neg_pool.size())];
    s.push_back(scores[a]);
    y.push_back(1);
    s.push_back(scores[b]);
    y.push_back(0);
  }
  return metrics::auc<double>(s, y);
}

std::vector<double> default_arm_grid() {
  std::vector<double> grid(7);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = 0.1 + 0.05 * static_cast<double>(k);
  return grid;
}

void validate(const BanditConfig& cfg) {
  if (cfg.arms.empty()) throw std::invalid_argument("bandit: arm grid is empty");
  for (double a : cfg.arms) {
    if (!(a > 0.0 && a < 0.5)) throw std::invalid_argument("bandit: arm values must lie in (0, 0.5)");
  }
  if (!(cfg.epsilon > 0.0 && cfg.epsilon <= 1.0)) {
    throw std::invalid_argument("bandit: epsilon must lie in (0, 1]");
  }
  if (cfg.iterations < 1) throw std::invalid_argument("bandit: iterations must be positive");
}

BanditOutcome run_epsilon_greedy(std::size_t arm_count, const std::function<double(std::size_t)>& reward,
                                 const BanditConfig& cfg, Rng& rng) {
  if (arm_count == 0) throw std::invalid_argument("bandit: no arms");
  BanditOutcome out;
  out.means.assign(arm_count, 0.0);
  out.pulls.assign(arm_count, 0);

  const auto better = [&](double a, double b) { return cfg.maximize ? a > b : a < b; };
  const auto best_pulled = [&]() {
    std::size_t best = arm_count;
    for (std::size_t k = 0; k < arm_count; ++k) {
      if (out.pulls[k] == 0) continue;
      if (best == arm_count || better(out.means[k], out.means[best])) best = k;
    }
    return best;
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    std::size_t arm;
    if (uniform_unit(rng) < cfg.epsilon) {
      arm = uniform_index(rng, arm_count);
    } else {
      const auto untried = std::find(out.pulls.begin(), out.pulls.end(), 0);
      arm = untried != out.pulls.end() ? static_cast<std::size_t>(untried - out.pulls.begin()) : best_pulled();
    }
    const double r = reward(arm);
    out.pulls[arm] += 1;
    out.means[arm] += (r - out.means[arm]) / static_cast<double>(out.pulls[arm]);
  }
  out.arm = best_pulled();
  return out;
}

ThresholdChoice bandit_select_threshold(const ScoreVector& scores, double mean_score, const LabelVector& rectified,
                                        const ConfidentSets& sets, const BanditConfig& cfg, Rng& rng) {
  validate(cfg);
  std::vector<NodeSet> arm_sets;
  arm_sets.reserve(cfg.arms.size());
  for (double delta : cfg.arms) arm_sets.push_back(candidate_set(scores, mean_score, delta, sets));

  ThresholdChoice choice;
  choice.outcome = run_epsilon_greedy(
      cfg.arms.size(), [&](std::size_t arm) { return bandit_reward(arm_sets[arm], scores, rectified, rng); }, cfg,
      rng);
  choice.delta = cfg.arms[choice.outcome.arm];
  choice.candidates = std::move(arm_sets[choice.outcome.arm]);
  return choice;
}

}  // namespace regad::confidence

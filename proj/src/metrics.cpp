#include "regad/metrics.hpp"

#include <cmath>

namespace regad::metrics {

double auc_on_labeled(const Vector& scores, const LabelVector& labels) {
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (!is_labeled(labels[v])) continue;
    s.push_back(scores[static_cast<Eigen::Index>(v)]);
    y.push_back(labels[v] == Label::Anomaly ? 1 : 0);
  }
  return auc<double>(s, y);
}

MetricReport evaluate(const Vector& scores, const std::vector<int>& truth, const NodeSet& nodes,
                      std::string split) {
  std::vector<double> s;
  std::vector<int> y;
  s.reserve(nodes.size());
  y.reserve(nodes.size());
  MetricReport r;
  for (NodeId v : nodes) {
    s.push_back(scores[v]);
    y.push_back(truth.at(static_cast<std::size_t>(v)));
    (y.back() == 1 ? r.n_pos : r.n_neg) += 1;
  }
  r.auc = auc<double>(s, y);
  r.aupr = aupr<double>(s, y);
  r.split = std::move(split);
  return r;
}

int correct_anomaly_count(int budget, double noise_ratio) {
  return static_cast<int>(std::lround(static_cast<double>(budget) * (1.0 - noise_ratio)));
}

NoisyLabels inject_label_noise(const std::vector<int>& clean, const NodeSet& pool, const NoiseConfig& cfg,
                               Rng& rng) {
  if (cfg.anomaly_budget < 0 || cfg.noise_ratio < 0.0 || cfg.noise_ratio > 1.0) {
    throw std::invalid_argument("inject_label_noise: budget must be >= 0 and ratio in [0, 1]");
  }
  NodeSet anomalies;
  NodeSet normals;
  for (NodeId v : pool) (clean.at(static_cast<std::size_t>(v)) == 1 ? anomalies : normals).push_back(v);

  const int correct = correct_anomaly_count(cfg.anomaly_budget, cfg.noise_ratio);
  const int flips = cfg.anomaly_budget - correct;
  if (correct > static_cast<int>(anomalies.size())) {
    throw std::invalid_argument("inject_label_noise: need " + std::to_string(correct) +
                                " true anomalies but the pool has " + std::to_string(anomalies.size()));
  }
  if (flips > static_cast<int>(normals.size())) {
    throw std::invalid_argument("inject_label_noise: not enough normal nodes to flip");
  }

  shuffle(anomalies, rng);
  shuffle(normals, rng);

  NoisyLabels out;
  out.observed.assign(clean.size(), Label::Unlabeled);
  out.true_anomalies.assign(anomalies.begin(), anomalies.begin() + correct);
  out.flipped.assign(normals.begin(), normals.begin() + flips);
  const std::size_t want_normals = static_cast<std::size_t>(cfg.normal_multiplier) *
                                   static_cast<std::size_t>(cfg.anomaly_budget);
  const std::size_t n_normals = std::min(want_normals, normals.size() - static_cast<std::size_t>(flips));
  out.labeled_normals.assign(normals.begin() + flips, normals.begin() + flips + static_cast<std::ptrdiff_t>(n_normals));

  for (NodeSet* s : {&out.true_anomalies, &out.flipped, &out.labeled_normals}) std::sort(s->begin(), s->end());
  for (NodeId v : out.true_anomalies) out.observed[static_cast<std::size_t>(v)] = Label::Anomaly;
  for (NodeId v : out.flipped) out.observed[static_cast<std::size_t>(v)] = Label::Anomaly;
  for (NodeId v : out.labeled_normals) out.observed[static_cast<std::size_t>(v)] = Label::Normal;
  return out;
}

}  // namespace regad::metrics

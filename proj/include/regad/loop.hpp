#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regad/confidence.hpp"
#include "regad/detector.hpp"
#include "regad/graph.hpp"
#include "regad/metrics.hpp"
#include "regad/pruner.hpp"

/// The detector/pruner cycle: pretrain, then per epoch rank nodes, rectify the
/// confident extremes, pick noisy candidates with the bandit, prune around
/// them, and fine-tune the detector on the refined graph.
namespace regad::loop {

struct LoopConfig {
  int epochs = 5;
  double confident_rate = 0.01;  // α
  confidence::BanditConfig bandit;
  pruner::PrunerConfig pruner;
  detector::DetectorConfig detector;
  std::uint64_t seed = 0;
};

void validate(const LoopConfig& cfg);

/// Stages to disable. With all three set the run is the plain detector,
/// trained for the same number of gradient steps on the noisy labels.
struct Ablation {
  bool no_rectify = false;
  bool no_prune = false;
  bool no_bandit = false;  // fixed δ at the grid midpoint

  std::string name() const;
};

/// Holds the clean labels. Only MetricReporter can read them, and every read is counted.
class CleanLabelVault {
 public:
  explicit CleanLabelVault(std::vector<int> labels) : labels_(std::move(labels)) {}
  std::size_t reads() const { return reads_; }

 private:
  friend class MetricReporter;
  const std::vector<int>& read() const {
    ++reads_;
    return labels_;
  }
  std::vector<int> labels_;
  mutable std::size_t reads_ = 0;
};

/// Scores held-out nodes against the clean labels.
class MetricReporter {
 public:
  MetricReporter(const CleanLabelVault& vault, NodeSet nodes, std::string split = "test")
      : vault_(vault), nodes_(std::move(nodes)), split_(std::move(split)) {}

  metrics::MetricReport report(const detector::ScoreVector& scores) const;
  std::size_t calls() const { return calls_; }
  const CleanLabelVault& vault() const { return vault_; }

 private:
  const CleanLabelVault& vault_;
  NodeSet nodes_;
  std::string split_;
  mutable std::size_t calls_ = 0;
};

struct EpochRow {
  int epoch = 0;
  double auc = 0.0;   // held-out, clean labels
  double aupr = 0.0;
  double delta = 0.0;
  std::size_t candidates = 0;
  std::size_t edges = 0;        // working-graph edge count after adoption
  double start_label_auc = 0.0; // detector AUC on Y′ before pruning
  double adopted_label_auc = 0.0;
  int adopted_episode = -1;     // -1: no structure change adopted
};

struct EpisodeRow {
  int epoch = 0;
  int episode = 0;
  int step = 0;
  std::size_t edges_cut = 0;  // edges removed by this step's action
  double reward = 0.0;
};

struct RunResult {
  detector::ScoreVector scores;
  LabelVector rectified;
  graph::AttributedGraph graph;
  nk::ParamStore detector_params;
  nk::ParamStore policy_params;
  std::vector<EpochRow> epochs;
  std::vector<EpisodeRow> episodes;
  metrics::MetricReport final_metrics;
  std::size_t clean_reads_outside_reporter = 0;
  double wallclock_seconds = 0.0;
};

/// Full pipeline. The noisy labels must contain both classes. The clean labels
/// are touched only through `reporter`, once per epoch and once at the end.
RunResult run_regad(const graph::AttributedGraph& g, const LabelVector& noisy, const MetricReporter& reporter,
                    const LoopConfig& cfg);

/// run_regad with the named stages disabled.
RunResult ablate(const graph::AttributedGraph& g, const LabelVector& noisy, const MetricReporter& reporter,
                 const LoopConfig& cfg, const Ablation& switches);

}  // namespace regad::loop

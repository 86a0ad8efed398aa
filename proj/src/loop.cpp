#include "regad/loop.hpp"

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>

namespace regad::loop {

namespace {

enum Stream : std::uint64_t { kPretrain = 1, kPolicyInit = 2, kBatchMean = 100, kBandit = 200, kFinetune = 300 };

}  // namespace

void validate(const LoopConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("loop: epochs must be non-negative");
  if (!(cfg.confident_rate > 0.0 && cfg.confident_rate <= 0.5)) {
    throw std::invalid_argument("loop: confident rate must lie in (0, 0.5]");
  }
  confidence::validate(cfg.bandit);
  pruner::validate(cfg.pruner);
  detector::validate(cfg.detector);
}

std::string Ablation::name() const {
  if (!no_rectify && !no_prune && !no_bandit) return "regad";
  std::string out;
  const auto append = [&](bool on, const char* tag) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += tag;
  };
  append(no_rectify, "no_rectify");
  append(no_prune, "no_prune");
  append(no_bandit, "no_bandit");
  return out;
}

metrics::MetricReport MetricReporter::report(const detector::ScoreVector& scores) const {
  ++calls_;
  return metrics::evaluate(scores.values, vault_.read(), nodes_, split_);
}

RunResult run_regad(const graph::AttributedGraph& g, const LabelVector& noisy, const MetricReporter& reporter,
                    const LoopConfig& cfg) {
  return ablate(g, noisy, reporter, cfg, Ablation{});
}

RunResult ablate(const graph::AttributedGraph& g, const LabelVector& noisy, const MetricReporter& reporter,
                 const LoopConfig& cfg, const Ablation& switches) {
  validate(cfg);
  if (static_cast<NodeId>(noisy.size()) != g.n()) throw std::invalid_argument("run_regad: label table size mismatch");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t reads_at_start = reporter.vault().reads();
  const std::size_t calls_at_start = reporter.calls();

  RunResult result;
  Rng pretrain_rng = derive_rng(cfg.seed, kPretrain);
  result.detector_params = detector::pretrain_detector(g, noisy, cfg.detector, pretrain_rng).params;
  Rng policy_rng = derive_rng(cfg.seed, kPolicyInit);
  result.policy_params = pruner::init_policy(cfg.detector.hidden, cfg.pruner, policy_rng);
  result.graph = g;

  const double fixed_delta = cfg.bandit.arms[cfg.bandit.arms.size() / 2];
  const auto rectify = [&](const detector::ScoreVector& scores, confidence::ConfidentSets& sets) {
    sets = confidence::select_confident_sets(scores, cfg.confident_rate);
    return switches.no_rectify ? noisy : confidence::rectify_labels(noisy, sets);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    EpochRow row;
    row.epoch = epoch;

    pruner::MdpState start = pruner::make_state(result.graph, result.detector_params);
    const detector::ScoreVector scores = detector::score(*start.embeddings, result.detector_params);
    confidence::ConfidentSets sets;
    const LabelVector supervision = rectify(scores, sets);
    row.start_label_auc = metrics::auc_on_labeled(scores.values, supervision);
    row.adopted_label_auc = row.start_label_auc;

    if (!switches.no_prune) {
      Rng mean_rng = derive_rng(cfg.seed, kBatchMean + e);
      const double mean_score = confidence::balanced_mean_score(scores, supervision, cfg.detector.batch_size, mean_rng);
      NodeSet candidates;
      if (switches.no_bandit) {
        row.delta = fixed_delta;
        candidates = confidence::candidate_set(scores, mean_score, fixed_delta, sets);
      } else {
        Rng bandit_rng = derive_rng(cfg.seed, kBandit + e);
        confidence::ThresholdChoice choice =
            confidence::bandit_select_threshold(scores, mean_score, supervision, sets, cfg.bandit, bandit_rng);
        row.delta = choice.delta;
        candidates = std::move(choice.candidates);
      }
      row.candidates = candidates.size();

      if (!candidates.empty()) {
        double best_return = 0.0;
        std::optional<pruner::Trajectory> best;
        for (int episode = 0; episode < cfg.pruner.episodes; ++episode) {
          pruner::Trajectory traj = pruner::run_episode(start, result.detector_params, result.policy_params,
                                                        candidates, supervision, cfg.pruner);
          for (std::size_t t = 0; t < traj.steps.size(); ++t) {
            result.episodes.push_back(
                {epoch, episode, static_cast<int>(t), traj.steps[t].action.size(), traj.steps[t].reward});
          }
          pruner::policy_update(traj, result.policy_params, cfg.pruner);
          const double ret = traj.discounted_return();
          if (!best || ret > best_return) {
            best_return = ret;
            best = std::move(traj);
            row.adopted_episode = episode;
          }
        }
        // Adopt only a structure the frozen detector ranks at least as well.
        if (best && !best->cut.empty() && best->final_auc >= best->start_auc) {
          result.graph = best->final_state.graph;
          row.adopted_label_auc = best->final_auc;
        } else {
          row.adopted_episode = -1;
        }
      }
    }

    Rng finetune_rng = derive_rng(cfg.seed, kFinetune + e);
    result.detector_params = detector::train_detector(result.graph, supervision, cfg.detector,
                                                      std::move(result.detector_params), cfg.detector.finetune_epochs,
                                                      finetune_rng)
                                 .params;
    row.edges = result.graph.edge_count();

    const detector::ScoreVector tuned =
        detector::score_graph(graph::normalize_adjacency(result.graph), g.features(), result.detector_params);
    const metrics::MetricReport rep = reporter.report(tuned);
    row.auc = rep.auc;
    row.aupr = rep.aupr;
    result.epochs.push_back(row);
  }

  result.scores = detector::score_graph(graph::normalize_adjacency(result.graph), g.features(), result.detector_params);
  confidence::ConfidentSets final_sets;
  result.rectified = rectify(result.scores, final_sets);
  result.final_metrics = reporter.report(result.scores);
  result.clean_reads_outside_reporter =
      (reporter.vault().reads() - reads_at_start) - (reporter.calls() - calls_at_start);
  result.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace regad::loop

#include "regad/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "regad/metrics.hpp"

namespace regad::pruner {

namespace {

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = (2.0 * uniform_unit(rng) - 1.0) * limit;
  return w;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Higher probability first, then lower canonical edge.
bool ranks_before(const EdgeProbability& a, const EdgeProbability& b) {
  return a.probability > b.probability || (a.probability == b.probability && a.edge < b.edge);
}

}  // namespace

void validate(const PrunerConfig& cfg) {
  if (cfg.top_k < 1) throw std::invalid_argument("pruner: top_k must be >= 1");
  if (cfg.max_edges_per_step < 1) throw std::invalid_argument("pruner: n_t must be >= 1");
  if (!(cfg.budget_rate >= 0.0)) throw std::invalid_argument("pruner: budget rate must be non-negative");
  if (!(cfg.discount > 0.0 && cfg.discount <= 1.0)) throw std::invalid_argument("pruner: discount must be in (0, 1]");
  if (!(cfg.learning_rate > 0.0) || cfg.weight_decay < 0.0) throw std::invalid_argument("pruner: bad learning rate");
  if (cfg.episodes < 0 || cfg.step_cap < 1) throw std::invalid_argument("pruner: bad episode or step cap");
  if (cfg.policy_hidden < 1 || cfg.policy_out < 1) throw std::invalid_argument("pruner: bad policy sizes");
}

ParamStore init_policy(Eigen::Index input_dim, const PrunerConfig& cfg, Rng& rng) {
  ParamStore p;
  p.add("policy_gcn0", glorot(input_dim, cfg.policy_hidden, rng));
  p.add("policy_gcn1", glorot(cfg.policy_hidden, cfg.policy_out, rng));
  return p;
}

MdpState make_state(graph::AttributedGraph g, const ParamStore& detector_params, int step) {
  auto adj = std::make_shared<const graph::NormalizedAdjacency>(graph::normalize_adjacency(g));
  auto h = std::make_shared<const Matrix>(detector::embed(*adj, g.features(), detector_params));
  return MdpState{std::move(g), std::move(adj), std::move(h), step};
}

Matrix policy_embeddings(const graph::NormalizedAdjacency& adj, const Matrix& h, const ParamStore& policy) {
  const Matrix z = (adj.matrix * (h * policy.entries()[0].value)).cwiseMax(0.0);
  return adj.matrix * (z * policy.entries()[1].value);
}

std::vector<EdgeProbability> policy_forward(const MdpState& state, const ParamStore& policy, const NodeSet& candidates,
                                            const EdgeSet& mask) {
  const EdgeSet eligible = graph::incident_edges(state.graph, candidates, mask);
  std::vector<EdgeProbability> out;
  if (eligible.empty()) return out;
  const Matrix e = policy_embeddings(*state.adjacency, *state.embeddings, policy);
  out.reserve(eligible.size());
  for (const Edge& edge : eligible) {
    out.push_back({edge, logistic(e.row(edge.i).dot(e.row(edge.j)))});
  }
  return out;
}

Action select_action(std::span<const EdgeProbability> probs, const NodeSet& candidates, int top_k, int max_edges) {
  std::map<NodeId, std::vector<EdgeProbability>> by_node;
  for (const EdgeProbability& p : probs) {
    by_node[p.edge.i].push_back(p);
    by_node[p.edge.j].push_back(p);
  }
  std::map<Edge, double> chosen;
  for (NodeId v : candidates) {
    auto it = by_node.find(v);
    if (it == by_node.end()) continue;
    std::vector<EdgeProbability>& incident = it->second;
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(top_k), incident.size());
    std::partial_sort(incident.begin(), incident.begin() + static_cast<std::ptrdiff_t>(take), incident.end(),
                      ranks_before);
    for (std::size_t k = 0; k < take; ++k) chosen.emplace(incident[k].edge, incident[k].probability);
  }

  std::vector<EdgeProbability> picked;
  picked.reserve(chosen.size());
  for (const auto& [edge, p] : chosen) picked.push_back({edge, p});
  if (picked.size() > static_cast<std::size_t>(max_edges)) {
    std::sort(picked.begin(), picked.end(), ranks_before);
    picked.resize(static_cast<std::size_t>(max_edges));
    std::sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) { return a.edge < b.edge; });
  }
  Action action;
  for (const EdgeProbability& p : picked) {
    action.edges.push_back(p.edge);
    action.probabilities.push_back(p.probability);
  }
  return action;
}

MdpState transition(const MdpState& state, const Action& action, const ParamStore& detector_params) {
  if (action.empty()) return MdpState{state.graph, state.adjacency, state.embeddings, state.step + 1};
  return make_state(graph::prune_edges(state.graph, action.as_set()), detector_params, state.step + 1);
}

double state_auc(const MdpState& state, const ParamStore& detector_params, const LabelVector& labels) {
  const detector::ScoreVector s = detector::score(*state.embeddings, detector_params);
  return metrics::auc_on_labeled(s.values, labels);
}

double compute_reward(const MdpState& before, const MdpState& after, const ParamStore& detector_params,
                      const LabelVector& rectified) {
  return state_auc(after, detector_params, rectified) - state_auc(before, detector_params, rectified);
}

double Trajectory::discounted_return() const {
  double total = 0.0;
  double weight = 1.0;
  for (const Step& s : steps) {
    total += weight * s.reward;
    weight *= discount;
  }
  return total;
}

Trajectory run_episode(const MdpState& start, const ParamStore& detector_params, const ParamStore& policy,
                       const NodeSet& candidates, const LabelVector& rectified, const PrunerConfig& cfg,
                       const RewardOverride& reward_override) {
  validate(cfg);
  Trajectory traj;
  traj.discount = cfg.discount;
  traj.budget = cfg.budget_rate * static_cast<double>(candidates.size());
  traj.final_state = start;
  const bool auc_rewards = !reward_override;
  traj.start_auc = auc_rewards ? state_auc(start, detector_params, rectified) : std::numeric_limits<double>::quiet_NaN();
  traj.final_auc = traj.start_auc;
  if (!(traj.budget > 0.0)) {
    traj.termination = Termination::ZeroBudget;
    return traj;
  }

  MdpState state = start;
  double current_auc = traj.start_auc;
  traj.termination = Termination::StepCap;
  for (int t = 0; t < cfg.step_cap; ++t) {
    const std::vector<EdgeProbability> probs = policy_forward(state, policy, candidates, traj.cut);
    const Action action = select_action(probs, candidates, cfg.top_k, cfg.max_edges_per_step);
    if (action.empty()) {
      traj.termination = Termination::Exhausted;
      break;
    }
    MdpState next = transition(state, action, detector_params);
    double reward;
    if (auc_rewards) {
      // The previous step's "after" AUC is this step's "before".
      const double next_auc = state_auc(next, detector_params, rectified);
      reward = next_auc - current_auc;
      current_auc = next_auc;
    } else {
      reward = reward_override(state, action, next);
    }
    if (!std::isfinite(reward)) throw NonFiniteError("run_episode: non-finite reward at step " + std::to_string(t));
    traj.cut.insert(action.edges.begin(), action.edges.end());
    traj.steps.push_back(Step{state.adjacency, state.embeddings, action, reward});
    state = std::move(next);
    if (static_cast<double>(traj.cut.size()) >= traj.budget) {
      traj.termination = Termination::Budget;
      break;
    }
  }
  traj.final_auc = current_auc;
  traj.final_state = std::move(state);
  return traj;
}

nk::Var reinforce_loss(nk::Tape& tape, std::span<const nk::Var> vars, const Trajectory& trajectory) {
  if (vars.size() != 2) throw std::invalid_argument("reinforce_loss: expected two policy parameters");
  nk::Var total = tape.constant(Matrix::Zero(1, 1));
  double weight = 1.0;
  for (const Step& s : trajectory.steps) {
    const double coeff = -weight * s.reward;
    weight *= trajectory.discount;
    if (coeff == 0.0 || s.action.empty()) continue;
    const nk::Var h = tape.constant(*s.embeddings);
    const nk::Var z = nk::relu(nk::spmm(s.adjacency->matrix, nk::matmul(h, vars[0])));
    const nk::Var e = nk::spmm(s.adjacency->matrix, nk::matmul(z, vars[1]));
    std::vector<std::pair<NodeId, NodeId>> pairs;
    pairs.reserve(s.action.size());
    for (const Edge& edge : s.action.edges) pairs.emplace_back(edge.i, edge.j);
    const nk::Var logp = nk::log_sigmoid(nk::pair_dot(e, pairs));
    total = nk::add(total, nk::weighted_sum(logp, Matrix::Constant(logp.rows(), 1, coeff)));
  }
  return total;
}

UpdateReport policy_update(const Trajectory& trajectory, ParamStore& policy, const PrunerConfig& cfg) {
  UpdateReport report;
  const bool any_signal = std::any_of(trajectory.steps.begin(), trajectory.steps.end(),
                                      [](const Step& s) { return s.reward != 0.0 && !s.action.empty(); });
  if (!any_signal) return report;

  nk::Tape tape;
  const std::vector<nk::Var> vars = nk::bind(tape, policy);
  const nk::Var loss = reinforce_loss(tape, vars, trajectory);
  report.loss = loss.value()(0, 0);
  if (!std::isfinite(report.loss)) throw NonFiniteError("policy_update: non-finite loss");
  tape.backward(loss);
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Matrix& w = policy.entries()[k].value;
    Matrix step = cfg.weight_decay * w;
    if (tape.has_grad(vars[k])) step += tape.grad(vars[k]);
    w -= cfg.learning_rate * step;
  }
  report.applied = true;
  return report;
}

}  // namespace regad::pruner

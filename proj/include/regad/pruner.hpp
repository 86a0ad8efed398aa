#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "regad/detector.hpp"
#include "regad/graph.hpp"
#include "regad/numkernel.hpp"

/// Edge-pruning decision process driven by a two-layer GCN policy.
///
/// A state is the current graph with its normalized adjacency and the
/// detector's embeddings. An action removes up to n_t edges incident to noisy
/// candidates; the reward is the change in detector AUC on the rectified
/// labels. The policy is trained with REINFORCE.
namespace regad::pruner {

using graph::Edge;
using graph::EdgeSet;
using nk::ParamStore;

struct PrunerConfig {
  int top_k = 2;                // edges per candidate per step
  int max_edges_per_step = 20;  // n_t
  double budget_rate = 2.0;     // η: episode ends once |E_cut| >= η·|NC|
  double discount = 0.9;        // γ
  double learning_rate = 0.005;
  double weight_decay = 5e-4;
  int episodes = 5;
  int step_cap = 50;
  int policy_hidden = 64;
  int policy_out = 32;
};

void validate(const PrunerConfig& cfg);

/// Glorot-uniform weights for the two policy GCN layers.
ParamStore init_policy(Eigen::Index input_dim, const PrunerConfig& cfg, Rng& rng);

struct MdpState {
  graph::AttributedGraph graph;
  std::shared_ptr<const graph::NormalizedAdjacency> adjacency;
  std::shared_ptr<const Matrix> embeddings;  // detector embeddings under `adjacency`
  int step = 0;
};

MdpState make_state(graph::AttributedGraph g, const ParamStore& detector_params, int step = 0);

struct EdgeProbability {
  Edge edge;
  double probability = 0.0;
};

/// Output embeddings of the policy: Â relu(Â H W0) W1.
Matrix policy_embeddings(const graph::NormalizedAdjacency& adj, const Matrix& h, const ParamStore& policy);

/// Probability logistic(e_i·e_j) for every edge incident to a candidate and
/// not in `mask`, in canonical edge order. Empty when the action space is exhausted.
std::vector<EdgeProbability> policy_forward(const MdpState& state, const ParamStore& policy, const NodeSet& candidates,
                                            const EdgeSet& mask);

struct Action {
  std::vector<Edge> edges;           // canonical order
  std::vector<double> probabilities; // parallel to `edges`, at selection time

  bool empty() const { return edges.empty(); }
  std::size_t size() const { return edges.size(); }
  EdgeSet as_set() const { return {edges.begin(), edges.end()}; }
};

/// Union over candidates of each candidate's top-k incident edges, trimmed to
/// the n_t most probable. Ties rank the lower canonical edge first.
Action select_action(std::span<const EdgeProbability> probs, const NodeSet& candidates, int top_k, int max_edges);

/// Prunes the action's edges, renormalizes and re-embeds with the detector.
MdpState transition(const MdpState& state, const Action& action, const ParamStore& detector_params);

/// Detector AUC on the labeled nodes of `labels` for a state.
double state_auc(const MdpState& state, const ParamStore& detector_params, const LabelVector& labels);

/// AUC(after) - AUC(before) on the rectified labels.
double compute_reward(const MdpState& before, const MdpState& after, const ParamStore& detector_params,
                      const LabelVector& rectified);

struct Step {
  std::shared_ptr<const graph::NormalizedAdjacency> adjacency;
  std::shared_ptr<const Matrix> embeddings;
  Action action;
  double reward = 0.0;
};

enum class Termination { ZeroBudget, Budget, Exhausted, StepCap };

struct Trajectory {
  std::vector<Step> steps;
  EdgeSet cut;
  double discount = 1.0;
  double budget = 0.0;
  Termination termination = Termination::ZeroBudget;
  MdpState final_state;
  double start_auc = 0.0;  // NaN when rewards come from an override
  double final_auc = 0.0;

  double discounted_return() const;
};

/// Replaces the detector-AUC reward, e.g. to test learning in a rigged environment.
using RewardOverride = std::function<double(const MdpState& before, const Action& action, const MdpState& after)>;

/// Rolls out one episode from `start`. Terminates when the cut reaches
/// η·|candidates|, when no eligible edge remains, or at the step cap.
Trajectory run_episode(const MdpState& start, const ParamStore& detector_params, const ParamStore& policy,
                       const NodeSet& candidates, const LabelVector& rectified, const PrunerConfig& cfg,
                       const RewardOverride& reward_override = {});

/// -Σ_t γ^t r_t Σ_{e∈a_t} log p_t(e), re-evaluated on `tape` from the recorded states.
/// `vars` are the bound policy parameters.
nk::Var reinforce_loss(nk::Tape& tape, std::span<const nk::Var> vars, const Trajectory& trajectory);

struct UpdateReport {
  double loss = 0.0;
  bool applied = false;
};

/// One gradient step θ ← θ - ℓ(∇L + λθ). Leaves `policy` untouched when
/// every reward is zero. Throws NonFiniteError on a non-finite loss.
UpdateReport policy_update(const Trajectory& trajectory, ParamStore& policy, const PrunerConfig& cfg);

}  // namespace regad::pruner

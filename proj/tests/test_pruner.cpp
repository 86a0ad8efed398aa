#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "regad/pruner.hpp"

using namespace regad;
using namespace regad::pruner;
using Pairs = std::vector<std::pair<NodeId, NodeId>>;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = standard_normal(rng);
  return m;
}

detector::DetectorConfig small_detector() {
  detector::DetectorConfig cfg;
  cfg.hidden = 8;
  cfg.score_hidden = 4;
  return cfg;
}

PrunerConfig small_pruner() {
  PrunerConfig cfg;
  cfg.policy_hidden = 6;
  cfg.policy_out = 4;
  return cfg;
}

Pairs random_edges(int n, double p, Rng& rng) {
  Pairs out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (uniform_unit(rng) < p) out.emplace_back(i, j);
  return out;
}

struct Fixture {
  graph::AttributedGraph g;
  ParamStore det;
  ParamStore policy;
};

Fixture fixture(std::uint64_t seed, int n, double p, int d = 3) {
  Rng rng = derive_rng(seed, 40);
  Fixture f;
  f.g = graph::build_graph(random_edges(n, p, rng), random_matrix(n, d, rng));
  f.det = detector::init_params(d, small_detector(), rng);
  f.policy = init_policy(small_detector().hidden, small_pruner(), rng);
  return f;
}

/// One-dimensional detector whose score is sigmoid(Â² x) for non-negative x.
ParamStore unit_detector() {
  ParamStore p;
  for (const char* name : {"gcn0", "gcn1", "head_w1", "head_w2"}) p.add(name, Matrix::Ones(1, 1));
  p.add("head_b1", Matrix::Zero(1, 1));
  p.add("head_b2", Matrix::Zero(1, 1));
  // Keep the store's canonical order.
  ParamStore ordered;
  for (const char* name : {"gcn0", "gcn1", "head_w1", "head_b1", "head_w2", "head_b2"}) ordered.add(name, p.at(name));
  return ordered;
}

LabelVector labels_alternating(int n) {
  LabelVector y(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) y[static_cast<std::size_t>(v)] = v % 3 == 0 ? Label::Anomaly : Label::Normal;
  return y;
}

double probability_of(const std::vector<EdgeProbability>& probs, Edge e) {
  for (const auto& p : probs)
    if (p.edge == e) return p.probability;
  return -1.0;
}

}  // namespace

TEST_CASE("policy_forward: zero weights, masks, dense oracle") {
  Fixture f = fixture(0, 12, 0.3);
  const MdpState s = make_state(f.g, f.det);
  const NodeSet cands{0, 1, 2};

  ParamStore zero = f.policy;
  for (auto& e : zero) e.value.setZero();
  for (const auto& p : policy_forward(s, zero, cands, {})) CHECK(p.probability == 0.5);

  const auto all = policy_forward(s, f.policy, cands, {});
  REQUIRE(!all.empty());
  CHECK(all.size() == graph::incident_edges(f.g, cands, {}).size());
  const Edge masked = all.front().edge;
  const auto rest = policy_forward(s, f.policy, cands, {masked});
  CHECK(rest.size() + 1 == all.size());
  CHECK(probability_of(rest, masked) == -1.0);

  // 4-node graph against the dense recomputation.
  Rng rng = derive_rng(0, 41);
  const Pairs edges{{0, 1}, {1, 2}, {2, 3}, {0, 2}};
  auto g4 = graph::build_graph(edges, random_matrix(4, 3, rng));
  const ParamStore det = detector::init_params(3, small_detector(), rng);
  const ParamStore pol = init_policy(small_detector().hidden, small_pruner(), rng);
  const MdpState s4 = make_state(g4, det);
  const Matrix ahat = oracle::dense_normalized(oracle::dense_adjacency(4, {{0, 1}, {1, 2}, {2, 3}, {0, 2}}));
  const Matrix h = oracle::detector_embed(ahat, g4.features(), det);
  const Matrix z = oracle::relu(oracle::naive_matmul(ahat, oracle::naive_matmul(h, pol.at("policy_gcn0"))));
  const Matrix e = oracle::naive_matmul(ahat, oracle::naive_matmul(z, pol.at("policy_gcn1")));
  const auto probs = policy_forward(s4, pol, {0, 3}, {});
  CHECK(probs.size() == 3);  // (1,2) touches neither 0 nor 3
  for (const auto& p : probs) {
    CHECK(p.edge.i < p.edge.j);
    const double want = oracle::logistic(e.row(p.edge.i).dot(e.row(p.edge.j)));
    CHECK(std::abs(p.probability - want) <= 1e-12);
    CHECK(p.probability > 0.0);
    CHECK(p.probability < 1.0);
  }
}

TEST_CASE("select_action") {
  // Candidate 0 with incident edges to 1, 2, 3.
  const std::vector<EdgeProbability> probs{{{0, 1}, 0.9}, {{0, 2}, 0.7}, {{0, 3}, 0.2}};
  const Action a = select_action(probs, {0}, 2, 10);
  CHECK(a.edges == std::vector<Edge>{{0, 1}, {0, 2}});
  CHECK(a.probabilities == std::vector<double>{0.9, 0.7});

  const std::vector<EdgeProbability> masked{{{0, 2}, 0.7}, {{0, 3}, 0.2}};
  CHECK(select_action(masked, {0}, 2, 10).edges == std::vector<Edge>{{0, 2}, {0, 3}});

  const std::vector<EdgeProbability> shared{{{0, 1}, 0.9}, {{0, 2}, 0.1}, {{1, 3}, 0.2}};
  const Action u = select_action(shared, {0, 1}, 1, 10);
  CHECK(u.edges == std::vector<Edge>{{0, 1}});

  const std::vector<EdgeProbability> many{{{0, 1}, 0.3}, {{0, 2}, 0.8}, {{1, 2}, 0.6}, {{2, 3}, 0.6}};
  const Action capped = select_action(many, {0, 1, 2, 3}, 2, 2);
  CHECK(capped.edges == std::vector<Edge>{{0, 2}, {1, 2}});  // tie at 0.6 keeps the lower edge

  const std::vector<EdgeProbability> ties{{{0, 3}, 0.5}, {{0, 1}, 0.5}, {{0, 2}, 0.5}};
  CHECK(select_action(ties, {0}, 2, 10).edges == std::vector<Edge>{{0, 1}, {0, 2}});
  CHECK(select_action({}, {0}, 2, 10).empty());
}

TEST_CASE("transition") {
  Fixture f = fixture(1, 20, 0.2);
  const MdpState s = make_state(f.g, f.det);
  const MdpState same = transition(s, Action{}, f.det);
  CHECK(same.adjacency == s.adjacency);
  CHECK(*same.embeddings == *s.embeddings);
  CHECK(same.step == s.step + 1);

  REQUIRE(f.g.edge_count() > 0);
  const Edge cut = f.g.edges()[f.g.edge_count() / 2];
  Action a;
  a.edges = {cut};
  a.probabilities = {0.5};
  const MdpState next = transition(s, a, f.det);
  CHECK(next.graph.edge_count() + 1 == f.g.edge_count());
  // Rows outside the 2-hop field of the endpoints (in the original graph) are untouched.
  std::set<NodeId> field{cut.i, cut.j};
  for (int hop = 0; hop < 2; ++hop) {
    std::set<NodeId> grown = field;
    for (NodeId v : field)
      for (int u : f.g.neighbors(v)) grown.insert(u);
    field = grown;
  }
  int changed_outside = 0;
  for (NodeId v = 0; v < f.g.n(); ++v) {
    if (field.count(v)) continue;
    changed_outside += (next.embeddings->row(v) - s.embeddings->row(v)).cwiseAbs().maxCoeff() != 0.0;
  }
  CHECK(changed_outside == 0);
  std::vector<std::pair<int, int>> raw;
  for (const Edge& e : next.graph.edges()) raw.emplace_back(e.i, e.j);
  const Matrix want = oracle::detector_embed(oracle::dense_normalized(oracle::dense_adjacency(f.g.n(), raw)),
                                             f.g.features(), f.det);
  CHECK((*next.embeddings - want).cwiseAbs().maxCoeff() <= 1e-12);

  // Isolating a node leaves a function of its own features only.
  const NodeId v = cut.i;
  Action iso;
  for (int u : f.g.neighbors(v)) iso.edges.push_back(graph::canonical(v, u));
  std::sort(iso.edges.begin(), iso.edges.end());
  iso.probabilities.assign(iso.edges.size(), 0.5);
  const MdpState lonely = transition(s, iso, f.det);
  const Matrix x = f.g.features().row(v);
  const Matrix self = oracle::relu(oracle::naive_matmul(oracle::relu(oracle::naive_matmul(x, f.det.at("gcn0"))), f.det.at("gcn1")));
  CHECK((lonely.embeddings->row(v) - self).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("compute_reward") {
  Fixture f = fixture(2, 15, 0.3);
  const MdpState s = make_state(f.g, f.det);
  const LabelVector y = labels_alternating(15);
  CHECK(compute_reward(s, s, f.det, y) == 0.0);
  CHECK(compute_reward(s, make_state(f.g, f.det), f.det, y) == 0.0);

  // Anomalies 0 (x=0.95) and 1 (x=1.5); normals 2, 4, 5; node 3 unlabeled.
  // Normal 2 borrows mass from node 3 and outranks anomaly 0 until (2,3) is cut.
  Matrix x(6, 1);
  x << 0.95, 1.5, 0.2, 1.8, 0.1, 0.3;
  const Pairs edges{{2, 3}, {4, 5}};
  auto g = graph::build_graph(edges, x);
  const LabelVector lab{Label::Anomaly, Label::Anomaly, Label::Normal, Label::Unlabeled, Label::Normal, Label::Normal};
  const ParamStore det = unit_detector();
  const MdpState before = make_state(g, det);
  const MdpState after = make_state(graph::prune_edges(g, {Edge{2, 3}}), det);
  const auto oracle_auc = [&](const graph::AttributedGraph& gg) {
    std::vector<std::pair<int, int>> raw;
    for (const Edge& e : gg.edges()) raw.emplace_back(e.i, e.j);
    const Matrix h = oracle::detector_embed(oracle::dense_normalized(oracle::dense_adjacency(6, raw)), x, det);
    const auto s = oracle::detector_score(h, det);
    return oracle::brute_auc({s[0], s[1], s[2], s[4], s[5]}, {1, 1, 0, 0, 0});
  };
  const double r = compute_reward(before, after, det, lab);
  CHECK(oracle_auc(g) == doctest::Approx(5.0 / 6.0));
  CHECK(r == doctest::Approx(oracle_auc(graph::prune_edges(g, {Edge{2, 3}})) - oracle_auc(g)));
  CHECK(r == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("run_episode termination") {
  Fixture f = fixture(3, 30, 1.0);  // complete graph
  const MdpState start = make_state(f.g, f.det);
  const LabelVector y = labels_alternating(30);

  SUBCASE("zero budget") {
    const auto t = run_episode(start, f.det, f.policy, {}, y, small_pruner());
    CHECK(t.termination == Termination::ZeroBudget);
    CHECK(t.steps.empty());
    CHECK(t.final_state.graph.edges() == f.g.edges());
  }
  SUBCASE("budget with full steps") {
    PrunerConfig cfg = small_pruner();
    cfg.budget_rate = 2.0;
    cfg.max_edges_per_step = 5;
    const NodeSet nc{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    const auto t = run_episode(start, f.det, f.policy, nc, y, cfg);
    CHECK(t.termination == Termination::Budget);
    CHECK(t.steps.size() == 4);
    for (const auto& s : t.steps) CHECK(s.action.size() == 5);
    CHECK(t.cut.size() == 20);
  }
  SUBCASE("exhaustion") {
    Fixture sparse = fixture(4, 30, 0.05);
    const MdpState st = make_state(sparse.g, sparse.det);
    PrunerConfig cfg = small_pruner();
    cfg.budget_rate = 1000.0;
    const NodeSet nc{0, 1};
    const auto t = run_episode(st, sparse.det, sparse.policy, nc, y, cfg);
    CHECK(t.termination == Termination::Exhausted);
    CHECK(t.cut == graph::incident_edges(sparse.g, nc, {}));
    CHECK(graph::incident_edges(t.final_state.graph, nc, {}).empty());
  }
  SUBCASE("step cap") {
    PrunerConfig cfg = small_pruner();
    cfg.budget_rate = 1000.0;
    cfg.step_cap = 3;
    cfg.top_k = 1;
    const auto t = run_episode(start, f.det, f.policy, {0}, y, cfg);
    CHECK(t.termination == Termination::StepCap);
    CHECK(t.steps.size() == 3);
  }
}

TEST_CASE("episode invariants") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Fixture f = fixture(10 + seed, 40, 0.15);
    const MdpState start = make_state(f.g, f.det);
    const LabelVector y = labels_alternating(40);
    PrunerConfig cfg = small_pruner();
    cfg.max_edges_per_step = 4;
    const NodeSet nc{1, 5, 9, 13, 17};
    const auto t = run_episode(start, f.det, f.policy, nc, y, cfg);
    std::set<Edge> seen;
    double total_reward = 0.0;
    for (const auto& s : t.steps) {
      CHECK(s.action.size() <= 4);
      for (const Edge& e : s.action.edges) {
        CHECK(seen.insert(e).second);
        CHECK((std::binary_search(nc.begin(), nc.end(), e.i) || std::binary_search(nc.begin(), nc.end(), e.j)));
      }
      total_reward += s.reward;
    }
    CHECK(seen == t.cut);
    CHECK(static_cast<double>(t.cut.size()) <= cfg.budget_rate * nc.size() + cfg.max_edges_per_step);
    const Matrix a = Matrix(t.final_state.graph.adjacency());
    CHECK(a.isApprox(a.transpose(), 0.0));
    CHECK(a.diagonal().isZero(0.0));
    CHECK(t.final_auc - t.start_auc == doctest::Approx(total_reward).epsilon(1e-12));
  }
}

TEST_CASE("policy_update") {
  Fixture f = fixture(5, 25, 0.25);
  const MdpState start = make_state(f.g, f.det);
  const NodeSet nc{2, 4, 6};
  PrunerConfig cfg = small_pruner();
  cfg.budget_rate = 1.0;

  SUBCASE("zero rewards leave parameters untouched") {
    const auto t = run_episode(start, f.det, f.policy, nc, {}, cfg,
                               [](const MdpState&, const Action&, const MdpState&) { return 0.0; });
    ParamStore p = f.policy;
    const auto rep = policy_update(t, p, cfg);
    CHECK_FALSE(rep.applied);
    CHECK(p == f.policy);
  }
  SUBCASE("a positive reward raises the selected probabilities") {
    cfg.learning_rate = 1e-3;
    cfg.step_cap = 1;
    const auto t = run_episode(start, f.det, f.policy, nc, {}, cfg,
                               [](const MdpState&, const Action&, const MdpState&) { return 1.0; });
    REQUIRE(t.steps.size() == 1);
    ParamStore p = f.policy;
    CHECK(policy_update(t, p, cfg).applied);
    const auto after = policy_forward(start, p, nc, {});
    const Action& a = t.steps[0].action;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(probability_of(after, a.edges[k]) > a.probabilities[k]);
  }
  SUBCASE("grad_check of the REINFORCE loss") {
    cfg.budget_rate = 10.0;
    cfg.top_k = 1;
    const auto t = run_episode(start, f.det, f.policy, nc, {}, cfg,
                               [](const MdpState& s, const Action&, const MdpState&) { return 0.3 - 0.1 * s.step; });
    REQUIRE(t.steps.size() >= 2);
    const nk::LossFn loss = [&](const ParamStore& params, ParamStore* grads) {
      nk::Tape tape;
      const auto vars = nk::bind(tape, params);
      nk::Var l = reinforce_loss(tape, vars, t);
      const double v = l.value()(0, 0);
      if (grads) {
        tape.backward(l);
        *grads = nk::collect_gradients(tape, vars, params);
      }
      return v;
    };
    const auto rep = nk::grad_check(loss, f.policy, 1e-4);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("reinforce loss discounts with a zero-based exponent") {
  Fixture f = fixture(6, 20, 0.3);
  const MdpState start = make_state(f.g, f.det);
  PrunerConfig cfg = small_pruner();
  cfg.budget_rate = 10.0;
  cfg.step_cap = 2;
  cfg.top_k = 1;
  cfg.discount = 0.5;
  const auto t = run_episode(start, f.det, f.policy, {0, 1}, {}, cfg,
                             [](const MdpState&, const Action&, const MdpState&) { return 1.0; });
  REQUIRE(t.steps.size() == 2);
  double want = 0.0;
  double w = 1.0;
  for (const auto& s : t.steps) {
    for (double p : s.action.probabilities) want -= w * std::log(p);
    w *= cfg.discount;
  }
  nk::Tape tape;
  const auto vars = nk::bind(tape, f.policy);
  CHECK(reinforce_loss(tape, vars, t).value()(0, 0) == doctest::Approx(want).epsilon(1e-12));
  CHECK(t.discounted_return() == 1.5);
}

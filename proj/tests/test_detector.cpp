#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "regad/data_io.hpp"
#include "regad/detector.hpp"
#include "regad/metrics.hpp"

using namespace regad;
using namespace regad::detector;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = standard_normal(rng);
  return m;
}

DetectorConfig small_config() {
  DetectorConfig cfg;
  cfg.hidden = 6;
  cfg.score_hidden = 4;
  return cfg;
}

/// Random params with nonzero biases so the oracle exercises them.
ParamStore random_params(Eigen::Index d, const DetectorConfig& cfg, Rng& rng) {
  ParamStore p = init_params(d, cfg, rng);
  p.at("head_b1") = random_matrix(1, cfg.score_hidden, rng) * 0.1;
  p.at("head_b2") = random_matrix(1, 1, rng) * 0.1;
  return p;
}

graph::AttributedGraph random_graph(int n, int d, double p, Rng& rng) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (uniform_unit(rng) < p) edges.emplace_back(i, j);
  return graph::build_graph(edges, random_matrix(n, d, rng));
}

LabelVector labels_from(const std::vector<int>& clean, const NodeSet& labeled) {
  LabelVector out(clean.size(), Label::Unlabeled);
  for (NodeId v : labeled) out[static_cast<std::size_t>(v)] = clean[static_cast<std::size_t>(v)] ? Label::Anomaly : Label::Normal;
  return out;
}

std::vector<int> as_ints(const LabelVector& labels, std::span<const NodeId> nodes) {
  std::vector<int> out;
  for (NodeId v : nodes) out.push_back(static_cast<int>(labels[static_cast<std::size_t>(v)]));
  return out;
}

}  // namespace

TEST_CASE("embed: zero weights and a single node") {
  Rng rng = derive_rng(0, 0);
  const DetectorConfig cfg = small_config();
  auto g = random_graph(5, 3, 0.5, rng);
  ParamStore zero = init_params(3, cfg, rng);
  for (auto& e : zero) e.value.setZero();
  CHECK(embed(graph::normalize_adjacency(g), g.features(), zero).isZero(0.0));
  const ScoreVector s = score_graph(graph::normalize_adjacency(g), g.features(), zero);
  for (Eigen::Index v = 0; v < s.size(); ++v) CHECK(s.values[v] == 0.5);

  const Matrix x = random_matrix(1, 3, rng);
  auto single = graph::build_graph(std::vector<std::pair<NodeId, NodeId>>{}, x);
  const ParamStore p = random_params(3, cfg, rng);
  const Matrix want = oracle::relu(oracle::naive_matmul(oracle::relu(oracle::naive_matmul(x, p.at("gcn0"))), p.at("gcn1")));
  CHECK((embed(graph::normalize_adjacency(single), x, p) - want).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("embed and score match the dense oracle") {
  Rng rng = derive_rng(0, 1);
  const DetectorConfig cfg;  // full-size layers
  const std::vector<std::pair<NodeId, NodeId>> path{{0, 1}, {1, 2}};
  auto g = graph::build_graph(path, random_matrix(3, 5, rng));
  const ParamStore p = random_params(5, cfg, rng);
  const Matrix ahat = oracle::dense_normalized(oracle::dense_adjacency(3, {{0, 1}, {1, 2}}));
  const Matrix h = embed(graph::normalize_adjacency(g), g.features(), p);
  CHECK((h - oracle::detector_embed(ahat, g.features(), p)).cwiseAbs().maxCoeff() <= 1e-12);

  Rng rng5 = derive_rng(5, 1);
  auto g5 = random_graph(5, 4, 0.5, rng5);
  const ParamStore p5 = random_params(4, cfg, rng5);
  std::vector<std::pair<int, int>> raw;
  for (const auto& e : g5.edges()) raw.emplace_back(e.i, e.j);
  const Matrix h5 = oracle::detector_embed(oracle::dense_normalized(oracle::dense_adjacency(5, raw)), g5.features(), p5);
  const std::vector<double> want = oracle::detector_score(h5, p5);
  const ScoreVector got = score_graph(graph::normalize_adjacency(g5), g5.features(), p5);
  for (int v = 0; v < 5; ++v) {
    CHECK(std::abs(got.values[v] - want[static_cast<std::size_t>(v)]) <= 1e-12);
    CHECK(got.values[v] >= 0.0);
    CHECK(got.values[v] <= 1.0);
  }
}

TEST_CASE("a large output bias drives scores toward one") {
  Rng rng = derive_rng(1, 0);
  auto g = random_graph(6, 3, 0.4, rng);
  ParamStore p = random_params(3, small_config(), rng);
  p.at("head_b2")(0, 0) = 40.0;
  const ScoreVector s = score_graph(graph::normalize_adjacency(g), g.features(), p);
  CHECK(s.values.minCoeff() > 1.0 - 1e-12);
}

TEST_CASE("scores are permutation equivariant") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = derive_rng(seed, 2);
    const int n = 8 + static_cast<int>(uniform_index(rng, 25));
    auto g = random_graph(n, 4, 0.2, rng);
    const ParamStore p = random_params(4, small_config(), rng);
    std::vector<NodeId> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);  // new id of node v is perm[v]
    Matrix xp(n, 4);
    for (int v = 0; v < n; ++v) xp.row(perm[static_cast<std::size_t>(v)]) = g.features().row(v);
    std::vector<std::pair<NodeId, NodeId>> ep;
    for (const auto& e : g.edges()) ep.emplace_back(perm[static_cast<std::size_t>(e.i)], perm[static_cast<std::size_t>(e.j)]);
    auto gp = graph::build_graph(ep, xp);
    const ScoreVector a = score_graph(graph::normalize_adjacency(g), g.features(), p);
    const ScoreVector b = score_graph(graph::normalize_adjacency(gp), gp.features(), p);
    for (int v = 0; v < n; ++v) CHECK(a.values[v] == doctest::Approx(b.values[perm[static_cast<std::size_t>(v)]]).epsilon(1e-12));
  }
}

TEST_CASE("re-scoring is bitwise identical") {
  Rng rng = derive_rng(3, 0);
  auto g = random_graph(20, 4, 0.2, rng);
  const ParamStore p = random_params(4, small_config(), rng);
  const auto s1 = score_graph(graph::normalize_adjacency(g), g.features(), p);
  const auto s2 = score_graph(graph::normalize_adjacency(g), g.features(), p);
  CHECK(s1.values == s2.values);
}

TEST_CASE("deviation loss") {
  const std::vector<double> sample{-0.4, 0.6};  // mean 0.1, population std 0.5
  const ReferencePrior prior = make_prior(sample);
  CHECK(prior.mean == doctest::Approx(0.1));
  CHECK(prior.stddev == doctest::Approx(0.5));
  const double m = 5.0;
  const auto one = [&](double s, int y) {
    return deviation_loss(std::vector<double>{s}, std::vector<int>{y}, prior, m);
  };
  CHECK(one(prior.mean + m * prior.stddev, 1) == doctest::Approx(0.0));
  CHECK(one(prior.mean, 0) == 0.0);
  CHECK(one(prior.mean + 2 * prior.stddev, 0) == doctest::Approx(2.0));
  CHECK(one(prior.mean, 1) == doctest::Approx(m));
  CHECK(deviation_loss(std::vector<double>{prior.mean, prior.mean + 2 * prior.stddev}, std::vector<int>{0, 0}, prior, m) ==
        doctest::Approx(1.0));
  CHECK_THROWS_AS(make_prior(std::vector<double>{0.3, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(make_prior(std::vector<double>{}), std::invalid_argument);

  Rng rng = derive_rng(0, 3);
  const ReferencePrior drawn = draw_prior(5000, rng);
  CHECK(std::abs(drawn.mean) < 0.05);
  CHECK(std::abs(drawn.stddev - 1.0) < 0.05);

  nk::Tape tape;
  nk::Var s = tape.constant((Matrix(3, 1) << 0.2, 0.7, 0.9).finished());
  const std::vector<int> y{0, 1, 0};
  CHECK(deviation_loss(s, y, prior, m).value()(0, 0) ==
        doctest::Approx(deviation_loss(std::vector<double>{0.2, 0.7, 0.9}, y, prior, m)).epsilon(1e-15));
}

TEST_CASE("balanced batches") {
  LabelVector labels(40, Label::Unlabeled);
  for (int v = 0; v < 10; ++v) labels[static_cast<std::size_t>(v)] = Label::Anomaly;
  for (int v = 10; v < 30; ++v) labels[static_cast<std::size_t>(v)] = Label::Normal;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = derive_rng(seed, 4);
    const auto batch = sample_balanced_batch(labels, rng, 8);
    CHECK(batch.size() == 8);
    int anom = 0;
    for (NodeId v : batch) {
      CHECK(is_labeled(labels[static_cast<std::size_t>(v)]));
      anom += labels[static_cast<std::size_t>(v)] == Label::Anomaly;
    }
    CHECK(anom == 4);
  }

  LabelVector few(20, Label::Normal);
  few[1] = few[5] = few[9] = Label::Anomaly;
  Rng rng = derive_rng(1, 4);
  const auto batch = sample_balanced_batch(few, rng, 8);
  std::vector<NodeId> anomalies;
  for (NodeId v : batch)
    if (few[static_cast<std::size_t>(v)] == Label::Anomaly) anomalies.push_back(v);
  CHECK(anomalies.size() == 4);
  std::sort(anomalies.begin(), anomalies.end());
  CHECK(std::adjacent_find(anomalies.begin(), anomalies.end()) != anomalies.end());

  Rng r1 = derive_rng(7, 4), r2 = derive_rng(7, 4);
  CHECK(sample_balanced_batch(labels, r1, 16) == sample_balanced_batch(labels, r2, 16));

  LabelVector single_class(10, Label::Normal);
  CHECK_THROWS_AS(sample_balanced_batch(single_class, r1, 8), std::invalid_argument);
  CHECK_THROWS_AS(sample_balanced_batch(labels, r1, 7), std::invalid_argument);
}

TEST_CASE("grad_check on the full detector loss") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng = derive_rng(seed, 5);
    const DetectorConfig cfg = small_config();
    auto g = random_graph(8 + static_cast<int>(seed), 4, 0.35, rng);
    const auto adj = graph::normalize_adjacency(g);
    const Matrix propagated = adj.matrix * g.features();
    const ParamStore p = random_params(4, cfg, rng);
    const std::vector<NodeId> batch{0, 3, 5, 1, 2, 6};
    const std::vector<int> y{1, 1, 1, 0, 0, 0};
    const ReferencePrior prior = draw_prior(100, rng);
    const nk::LossFn loss = [&](const ParamStore& params, ParamStore* grads) {
      nk::Tape tape;
      const auto vars = nk::bind(tape, params);
      nk::Var l = batch_loss(tape, vars, adj, propagated, batch, y, prior, cfg.margin);
      const double value = l.value()(0, 0);
      if (grads) {
        tape.backward(l);
        *grads = nk::collect_gradients(tape, vars, params);
      }
      return value;
    };
    const auto report = nk::grad_check(loss, p, 1e-4);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("training: zero epochs, determinism, validation") {
  Rng rng = derive_rng(0, 6);
  auto g = random_graph(30, 4, 0.15, rng);
  LabelVector labels(30, Label::Normal);
  for (int v = 0; v < 30; v += 6) labels[static_cast<std::size_t>(v)] = Label::Anomaly;
  const DetectorConfig cfg = small_config();
  const ParamStore init = init_params(4, cfg, rng);
  Rng t0 = derive_rng(1, 0);
  CHECK(train_detector(g, labels, cfg, init, 0, t0).params == init);

  Rng a = derive_rng(2, 0), b = derive_rng(2, 0);
  CHECK(train_detector(g, labels, cfg, init, 20, a).params == train_detector(g, labels, cfg, init, 20, b).params);

  DetectorConfig odd = cfg;
  odd.batch_size = 7;
  CHECK_THROWS_AS(validate(odd), std::invalid_argument);
  DetectorConfig nomargin = cfg;
  nomargin.margin = 0.0;
  CHECK_THROWS_AS(validate(nomargin), std::invalid_argument);
}

TEST_CASE("training loss decreases on most seeds") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    io::SyntheticConfig sc;
    sc.n = 300;
    sc.attribute_shift = 3.0;
    sc.seed = seed;
    const auto data = io::generate_synthetic(sc);
    const LabelVector labels = labels_from(data.labels, data.nodes_in(io::Split::Train));
    DetectorConfig cfg;
    cfg.hidden = 32;
    cfg.score_hidden = 16;
    Rng rng = derive_rng(seed, 7);
    const auto res = pretrain_detector(data.graph, labels, cfg, rng);
    REQUIRE(res.epoch_loss.size() == static_cast<std::size_t>(cfg.pretrain_epochs));
    improved += res.epoch_loss.back() <= res.epoch_loss.front();
  }
  CHECK(improved >= 9);
}

TEST_CASE("separable data: training AUC above 0.95") {
  io::SyntheticConfig sc;
  sc.attribute_shift = 5.0;
  sc.seed = 1;
  const auto data = io::generate_synthetic(sc);
  const NodeSet train = data.nodes_in(io::Split::Train);
  const LabelVector labels = labels_from(data.labels, train);
  Rng rng = derive_rng(1, 8);
  const auto res = pretrain_detector(data.graph, labels, DetectorConfig{}, rng);
  const ScoreVector s = score_graph(graph::normalize_adjacency(data.graph), data.graph.features(), res.params);
  std::vector<double> ts;
  for (NodeId v : train) ts.push_back(s.values[v]);
  const double auc = oracle::brute_auc(ts, as_ints(labels, train));
  CHECK(auc > 0.95);
  CHECK(metrics::auc<double>(ts, as_ints(labels, train)) == auc);
}

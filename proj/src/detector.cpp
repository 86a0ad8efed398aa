#include "regad/detector.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace regad::detector {

namespace {

enum ParamIndex : std::size_t { kGcn0, kGcn1, kHeadW1, kHeadB1, kHeadW2, kHeadB2, kParamCount };

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = (2.0 * uniform_unit(rng) - 1.0) * limit;
  return w;
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NonFiniteError(std::string("detector: non-finite ") + what);
}

}  // namespace

void validate(const DetectorConfig& cfg) {
  if (cfg.hidden <= 0 || cfg.score_hidden <= 0) throw std::invalid_argument("detector: hidden sizes must be positive");
  if (cfg.batch_size <= 0 || cfg.batch_size % 2 != 0) {
    throw std::invalid_argument("detector: batch size must be a positive even number");
  }
  if (!(cfg.margin > 0.0)) throw std::invalid_argument("detector: margin must be positive");
  if (cfg.prior_samples < 2) throw std::invalid_argument("detector: prior needs at least two samples");
  if (!(cfg.learning_rate > 0.0) || cfg.weight_decay < 0.0) {
    throw std::invalid_argument("detector: learning rate must be positive, weight decay non-negative");
  }
  if (cfg.pretrain_epochs < 0 || cfg.finetune_epochs < 0) throw std::invalid_argument("detector: negative epochs");
}

ParamStore init_params(Eigen::Index feature_dim, const DetectorConfig& cfg, Rng& rng) {
  ParamStore p;
  p.add("gcn0", glorot(feature_dim, cfg.hidden, rng));
  p.add("gcn1", glorot(cfg.hidden, cfg.hidden, rng));
  p.add("head_w1", glorot(cfg.hidden, cfg.score_hidden, rng));
  p.add("head_b1", Matrix::Zero(1, cfg.score_hidden));
  p.add("head_w2", glorot(cfg.score_hidden, 1, rng));
  p.add("head_b2", Matrix::Zero(1, 1));
  return p;
}

double ScoreVector::mean_over(std::span<const NodeId> nodes) const {
  if (nodes.empty()) throw std::invalid_argument("ScoreVector::mean_over: empty node list");
  double total = 0.0;
  for (NodeId v : nodes) total += values[v];
  return total / static_cast<double>(nodes.size());
}

Matrix embed(const graph::NormalizedAdjacency& adj, const Matrix& features, const ParamStore& params) {
  const Matrix propagated = adj.matrix * features;
  const Matrix h1 = (propagated * params.entries()[kGcn0].value).cwiseMax(0.0);
  const Matrix mixed = h1 * params.entries()[kGcn1].value;
  Matrix h = (adj.matrix * mixed).cwiseMax(0.0);
  check_finite(h, "embedding");
  return h;
}

ScoreVector score(const Matrix& embeddings, const ParamStore& params) {
  const auto& e = params.entries();
  const Matrix z = ((embeddings * e[kHeadW1].value).rowwise() + e[kHeadB1].value.row(0)).cwiseMax(0.0);
  const Matrix logit = (z * e[kHeadW2].value).rowwise() + e[kHeadB2].value.row(0);
  ScoreVector out;
  out.values = logit.col(0).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  check_finite(out.values, "score");
  return out;
}

ScoreVector score_graph(const graph::NormalizedAdjacency& adj, const Matrix& features, const ParamStore& params) {
  return score(embed(adj, features, params), params);
}

ReferencePrior make_prior(std::span<const double> sample) {
  if (sample.empty()) throw std::invalid_argument("make_prior: empty sample");
  double mean = 0.0;
  for (double x : sample) mean += x;
  mean /= static_cast<double>(sample.size());
  double var = 0.0;
  for (double x : sample) var += (x - mean) * (x - mean);
  var /= static_cast<double>(sample.size());
  if (!(var > 0.0)) throw std::invalid_argument("make_prior: degenerate prior (zero standard deviation)");
  return {mean, std::sqrt(var)};
}

ReferencePrior draw_prior(int count, Rng& rng) {
  std::vector<double> sample(static_cast<std::size_t>(count));
  for (double& x : sample) x = standard_normal(rng);
  return make_prior(sample);
}

double deviation_loss(std::span<const double> scores, std::span<const int> labels, const ReferencePrior& prior,
                      double margin) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw std::invalid_argument("deviation_loss: batch must be nonempty and match labels");
  }
  if (!(prior.stddev > 0.0)) throw std::invalid_argument("deviation_loss: degenerate prior");
  double total = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double dev = (scores[k] - prior.mean) / prior.stddev;
    total += labels[k] == 1 ? std::max(0.0, margin - dev) : std::abs(dev);
  }
  return total / static_cast<double>(scores.size());
}

nk::Var deviation_loss(nk::Var scores, std::span<const int> labels, const ReferencePrior& prior, double margin) {
  const auto b = static_cast<Eigen::Index>(labels.size());
  if (b == 0 || scores.rows() != b || scores.cols() != 1) {
    throw std::invalid_argument("deviation_loss: batch must be nonempty and match labels");
  }
  if (!(prior.stddev > 0.0)) throw std::invalid_argument("deviation_loss: degenerate prior");
  Matrix w_normal(b, 1);
  Matrix w_anomaly(b, 1);
  for (Eigen::Index k = 0; k < b; ++k) {
    const double y = labels[static_cast<std::size_t>(k)] == 1 ? 1.0 : 0.0;
    w_normal(k, 0) = (1.0 - y) / static_cast<double>(b);
    w_anomaly(k, 0) = y / static_cast<double>(b);
  }
  const nk::Var dev = nk::affine(scores, 1.0 / prior.stddev, -prior.mean / prior.stddev);
  const nk::Var normal_part = nk::weighted_sum(nk::abs(dev), w_normal);
  const nk::Var anomaly_part = nk::weighted_sum(nk::relu(nk::affine(dev, -1.0, margin)), w_anomaly);
  return nk::add(normal_part, anomaly_part);
}

std::vector<NodeId> sample_balanced_batch(const LabelVector& labels, Rng& rng, int batch_size) {
  if (batch_size <= 0 || batch_size % 2 != 0) throw std::invalid_argument("balanced batch: size must be even");
  std::vector<NodeId> anomalies;
  std::vector<NodeId> normals;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] == Label::Anomaly) anomalies.push_back(static_cast<NodeId>(v));
    if (labels[v] == Label::Normal) normals.push_back(static_cast<NodeId>(v));
  }
  if (anomalies.empty() || normals.empty()) {
    throw std::invalid_argument("balanced batch: both an anomalous and a normal label are required");
  }
  const auto half = static_cast<std::size_t>(batch_size / 2);
  std::vector<NodeId> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (std::vector<NodeId>* cls : {&anomalies, &normals}) {
    if (cls->size() < half) {
      for (std::size_t k = 0; k < half; ++k) batch.push_back((*cls)[uniform_index(rng, cls->size())]);
    } else {
      // Partial Fisher-Yates: the first `half` slots become a uniform sample without replacement.
      for (std::size_t k = 0; k < half; ++k) {
        std::swap((*cls)[k], (*cls)[k + uniform_index(rng, cls->size() - k)]);
        batch.push_back((*cls)[k]);
      }
    }
  }
  return batch;
}

nk::Var batch_loss(nk::Tape& tape, std::span<const nk::Var> vars, const graph::NormalizedAdjacency& adj,
                   const Matrix& propagated, std::span<const NodeId> batch, std::span<const int> batch_labels,
                   const ReferencePrior& prior, double margin) {
  if (vars.size() != kParamCount) throw std::invalid_argument("batch_loss: expected detector parameters");
  const nk::Var x = tape.constant(propagated);
  const nk::Var h1 = nk::relu(nk::matmul(x, vars[kGcn0]));
  const nk::Var h = nk::relu(nk::spmm(adj.matrix, nk::matmul(h1, vars[kGcn1])));
  const nk::Var hb = nk::gather_rows(h, batch);
  const nk::Var z = nk::relu(nk::add_bias(nk::matmul(hb, vars[kHeadW1]), vars[kHeadB1]));
  const nk::Var s = nk::sigmoid(nk::add_bias(nk::matmul(z, vars[kHeadW2]), vars[kHeadB2]));
  return deviation_loss(s, batch_labels, prior, margin);
}

TrainResult train_detector(const graph::AttributedGraph& g, const LabelVector& supervision,
                           const DetectorConfig& cfg, ParamStore init, int epochs, Rng& rng) {
  validate(cfg);
  if (static_cast<NodeId>(supervision.size()) != g.n()) {
    throw std::invalid_argument("train_detector: label table size differs from node count");
  }
  TrainResult result{std::move(init), {}};
  if (epochs <= 0) return result;

  const ReferencePrior prior = draw_prior(cfg.prior_samples, rng);
  const graph::NormalizedAdjacency adj = graph::normalize_adjacency(g);
  const Matrix propagated = adj.matrix * g.features();
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<NodeId> batch = sample_balanced_batch(supervision, rng, cfg.batch_size);
    batch_labels.clear();
    for (NodeId v : batch) batch_labels.push_back(supervision[static_cast<std::size_t>(v)] == Label::Anomaly);

    nk::Tape tape;
    const std::vector<nk::Var> vars = nk::bind(tape, result.params);
    const nk::Var loss = batch_loss(tape, vars, adj, propagated, batch, batch_labels, prior, cfg.margin);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) {
      throw NonFiniteError("train_detector: loss diverged at epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(value);
    tape.backward(loss);
    for (std::size_t k = 0; k < vars.size(); ++k) {
      Matrix& w = result.params.entries()[k].value;
      if (tape.has_grad(vars[k])) {
        w -= cfg.learning_rate * (tape.grad(vars[k]) + cfg.weight_decay * w);
      } else {
        w *= 1.0 - cfg.learning_rate * cfg.weight_decay;
      }
    }
  }
  return result;
}

TrainResult pretrain_detector(const graph::AttributedGraph& g, const LabelVector& supervision,
                              const DetectorConfig& cfg, Rng& rng) {
  validate(cfg);
  ParamStore init = init_params(g.d(), cfg, rng);
  return train_detector(g, supervision, cfg, std::move(init), cfg.pretrain_epochs, rng);
}

}  // namespace regad::detector

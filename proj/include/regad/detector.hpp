#pragma once

#include <span>
#include <vector>

#include "regad/graph.hpp"
#include "regad/numkernel.hpp"
#include "regad/types.hpp"

/// GCN anomaly scorer trained with a deviation loss on balanced batches.
///
/// Architecture (row-per-node convention):
///   H1 = relu(Â X W0),  H = relu(Â H1 W1)
///   s  = sigmoid(relu(H Ws1 + b1) Ws2 + b2)
namespace regad::detector {

using nk::ParamStore;

struct DetectorConfig {
  int hidden = 128;
  int score_hidden = 64;
  double learning_rate = 0.1;
  double weight_decay = 5e-4;
  int batch_size = 64;  // even; half anomalies, half normals
  double margin = 5.0;
  int prior_samples = 5000;
  int pretrain_epochs = 200;
  int finetune_epochs = 50;
};

/// Throws std::invalid_argument on an odd batch size, non-positive margin, etc.
void validate(const DetectorConfig& cfg);

/// Glorot-uniform weights, zero biases.
ParamStore init_params(Eigen::Index feature_dim, const DetectorConfig& cfg, Rng& rng);

/// Per-node anomaly scores in [0, 1].
struct ScoreVector {
  Vector values;

  Eigen::Index size() const { return values.size(); }
  double operator[](NodeId v) const { return values[v]; }
  /// Arithmetic mean over `nodes` (duplicates counted).
  double mean_over(std::span<const NodeId> nodes) const;
};

/// Node embeddings H [n x hidden]. Throws NonFiniteError on NaN/inf output.
Matrix embed(const graph::NormalizedAdjacency& adj, const Matrix& features, const ParamStore& params);
ScoreVector score(const Matrix& embeddings, const ParamStore& params);
ScoreVector score_graph(const graph::NormalizedAdjacency& adj, const Matrix& features, const ParamStore& params);

/// Mean and population standard deviation of the reference score sample.
struct ReferencePrior {
  double mean = 0.0;
  double stddev = 1.0;
};

/// Throws std::invalid_argument on an empty or zero-variance sample.
ReferencePrior make_prior(std::span<const double> sample);
/// `count` draws from a unit Gaussian.
ReferencePrior draw_prior(int count, Rng& rng);

/// mean_v [(1-y)|dev(v)| + y max(0, m - dev(v))] with dev(v) = (s_v - μ)/σ.
double deviation_loss(std::span<const double> scores, std::span<const int> labels, const ReferencePrior& prior,
                      double margin);
nk::Var deviation_loss(nk::Var scores, std::span<const int> labels, const ReferencePrior& prior, double margin);

/// B/2 nodes labeled anomalous and B/2 labeled normal. A class smaller than
/// B/2 is sampled with replacement. Throws if a class is empty or B is odd.
std::vector<NodeId> sample_balanced_batch(const LabelVector& labels, Rng& rng, int batch_size);

/// Deviation loss of a batch through the full network, recorded on `tape`.
/// `vars` are the bound detector parameters. `propagated` is the constant Â X.
nk::Var batch_loss(nk::Tape& tape, std::span<const nk::Var> vars, const graph::NormalizedAdjacency& adj,
                   const Matrix& propagated, std::span<const NodeId> batch, std::span<const int> batch_labels,
                   const ReferencePrior& prior, double margin);

struct TrainResult {
  ParamStore params;
  std::vector<double> epoch_loss;
};

/// Gradient descent with L2 weight decay, one balanced batch per epoch,
/// warm-started from `init`. Throws NonFiniteError naming the epoch if the
/// loss diverges.
TrainResult train_detector(const graph::AttributedGraph& g, const LabelVector& supervision,
                           const DetectorConfig& cfg, ParamStore init, int epochs, Rng& rng);

/// Fresh initialization followed by `cfg.pretrain_epochs` of training.
TrainResult pretrain_detector(const graph::AttributedGraph& g, const LabelVector& supervision,
                              const DetectorConfig& cfg, Rng& rng);

}  // namespace regad::detector

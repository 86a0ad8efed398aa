#pragma once

#include <compare>
#include <memory>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "regad/types.hpp"

namespace regad::graph {

/// Undirected edge in canonical form (i < j).
struct Edge {
  NodeId i = 0;
  NodeId j = 0;
  auto operator<=>(const Edge&) const = default;
};

inline Edge canonical(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }

using EdgeSet = std::set<Edge>;

/// Immutable undirected attributed graph. Edges are stored once in canonical
/// form; the adjacency materializes both directions and has a zero diagonal.
/// The feature matrix is shared between a graph and every graph pruned from it.
class AttributedGraph {
 public:
  NodeId n() const { return n_; }
  Eigen::Index d() const { return features_->cols(); }
  std::size_t edge_count() const { return edges_.size(); }

  /// Canonical edges in ascending order.
  const std::vector<Edge>& edges() const { return edges_; }
  const SparseMatrix& adjacency() const { return adjacency_; }
  const Matrix& features() const { return *features_; }
  const std::shared_ptr<const Matrix>& shared_features() const { return features_; }

  std::span<const int> neighbors(NodeId v) const;
  int degree(NodeId v) const { return static_cast<int>(neighbors(v).size()); }
  bool has_edge(Edge e) const;

 private:
  friend AttributedGraph make_graph(NodeId, std::vector<Edge>, std::shared_ptr<const Matrix>);

  NodeId n_ = 0;
  std::vector<Edge> edges_;
  SparseMatrix adjacency_;
  std::shared_ptr<const Matrix> features_;
};

/// Builds from canonical, sorted, duplicate-free edges. Internal; prefer build_graph.
AttributedGraph make_graph(NodeId n, std::vector<Edge> edges, std::shared_ptr<const Matrix> features);

/// Validates and canonicalizes an edge list. Symmetric duplicates collapse to
/// one edge; self-loops and out-of-range ids throw std::invalid_argument.
AttributedGraph build_graph(std::span<const std::pair<NodeId, NodeId>> edges, Matrix features);

/// As above, additionally checking that the label table covers every node.
AttributedGraph build_graph(std::span<const std::pair<NodeId, NodeId>> edges, Matrix features,
                            const LabelVector& labels);

/// Â = D̃^{-1/2}(A+I)D̃^{-1/2} together with the self-loop-augmented degrees.
struct NormalizedAdjacency {
  SparseMatrix matrix;
  Eigen::VectorXi degrees;
};

/// Symmetric normalization with self-loops, for any scalar type.
template <typename Scalar>
Eigen::SparseMatrix<Scalar, Eigen::RowMajor> normalized_matrix(const AttributedGraph& g) {
  const NodeId n = g.n();
  std::vector<Eigen::Triplet<Scalar>> trips;
  trips.reserve(static_cast<std::size_t>(n) + 2 * g.edge_count());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_sqrt(n);
  for (NodeId v = 0; v < n; ++v) {
    inv_sqrt[v] = Scalar(1) / std::sqrt(Scalar(g.degree(v) + 1));
  }
  for (NodeId v = 0; v < n; ++v) {
    trips.emplace_back(v, v, inv_sqrt[v] * inv_sqrt[v]);
    for (int u : g.neighbors(v)) trips.emplace_back(v, u, inv_sqrt[v] * inv_sqrt[u]);
  }
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> out(n, n);
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

NormalizedAdjacency normalize_adjacency(const AttributedGraph& g);

/// Removes every edge in `cut` (both directions). Throws std::invalid_argument
/// when `cut` names an edge absent from the graph.
AttributedGraph prune_edges(const AttributedGraph& g, const EdgeSet& cut);

/// Edges incident to any anchor, excluding those in `mask`.
EdgeSet incident_edges(const AttributedGraph& g, const NodeSet& anchors, const EdgeSet& mask);

}  // namespace regad::graph

#include "regad/graph.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace regad::graph {

std::span<const int> AttributedGraph::neighbors(NodeId v) const {
  const int* outer = adjacency_.outerIndexPtr();
  const int* inner = adjacency_.innerIndexPtr();
  return {inner + outer[v], inner + outer[v + 1]};
}

bool AttributedGraph::has_edge(Edge e) const {
  if (e.i < 0 || e.j >= n_ || e.i >= e.j) return false;
  return std::binary_search(edges_.begin(), edges_.end(), e);
}

AttributedGraph make_graph(NodeId n, std::vector<Edge> edges, std::shared_ptr<const Matrix> features) {
  AttributedGraph g;
  g.n_ = n;
  g.features_ = std::move(features);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * edges.size());
  for (const Edge& e : edges) {
    trips.emplace_back(e.i, e.j, 1.0);
    trips.emplace_back(e.j, e.i, 1.0);
  }
  g.adjacency_.resize(n, n);
  g.adjacency_.setFromTriplets(trips.begin(), trips.end());
  g.adjacency_.makeCompressed();
  g.edges_ = std::move(edges);
  return g;
}

AttributedGraph build_graph(std::span<const std::pair<NodeId, NodeId>> edges, Matrix features) {
  const auto n = static_cast<NodeId>(features.rows());
  std::vector<Edge> canon;
  canon.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw std::invalid_argument("build_graph: node id out of range in edge (" + std::to_string(a) +
                                  "," + std::to_string(b) + ") for n=" + std::to_string(n));
    }
    if (a == b) throw std::invalid_argument("build_graph: self-loop at node " + std::to_string(a));
    canon.push_back(canonical(a, b));
  }
  std::sort(canon.begin(), canon.end());
  canon.erase(std::unique(canon.begin(), canon.end()), canon.end());
  return make_graph(n, std::move(canon), std::make_shared<const Matrix>(std::move(features)));
}

AttributedGraph build_graph(std::span<const std::pair<NodeId, NodeId>> edges, Matrix features,
                            const LabelVector& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("build_graph: label count " + std::to_string(labels.size()) +
                                " != feature rows " + std::to_string(features.rows()));
  }
  return build_graph(edges, std::move(features));
}

NormalizedAdjacency normalize_adjacency(const AttributedGraph& g) {
  NormalizedAdjacency out;
  out.matrix = normalized_matrix<double>(g);
  out.degrees.resize(g.n());
  for (NodeId v = 0; v < g.n(); ++v) out.degrees[v] = g.degree(v) + 1;
  return out;
}

AttributedGraph prune_edges(const AttributedGraph& g, const EdgeSet& cut) {
  if (cut.empty()) return g;
  for (const Edge& e : cut) {
    if (!g.has_edge(e)) {
      throw std::invalid_argument("prune_edges: edge (" + std::to_string(e.i) + "," +
                                  std::to_string(e.j) + ") is not in the graph");
    }
  }
  std::vector<Edge> kept;
  kept.reserve(g.edge_count() - cut.size());
  std::set_difference(g.edges().begin(), g.edges().end(), cut.begin(), cut.end(),
                      std::back_inserter(kept));
  return make_graph(g.n(), std::move(kept), g.shared_features());
}

EdgeSet incident_edges(const AttributedGraph& g, const NodeSet& anchors, const EdgeSet& mask) {
  EdgeSet out;
  for (NodeId v : anchors) {
    if (v < 0 || v >= g.n()) throw std::invalid_argument("incident_edges: anchor out of range");
    for (int u : g.neighbors(v)) {
      const Edge e = canonical(v, u);
      if (!mask.contains(e)) out.insert(e);
    }
  }
  return out;
}

}  // namespace regad::graph

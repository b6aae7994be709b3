#include "sheafalign/graph.hpp"

#include <algorithm>
#include <string>

#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

std::uint32_t CommGraph::modality(NodeId i) const {
  if (i >= node_count()) throw StructureError("node " + std::to_string(i) + " out of range");
  return modalities_[i];
}

const std::vector<NodeId>& CommGraph::neighbors(NodeId i) const {
  if (i >= node_count()) {
    throw StructureError("node " + std::to_string(i) + " out of range for graph of " +
                         std::to_string(node_count()) + " nodes");
  }
  return adjacency_[i];
}

bool CommGraph::has_edge(NodeId i, NodeId j) const { return edge_index(i, j).has_value(); }

std::optional<std::size_t> CommGraph::edge_index(NodeId i, NodeId j) const {
  if (i == j) return std::nullopt;
  const Edge key{std::min(i, j), std::max(i, j)};
  auto it = std::lower_bound(edges_.begin(), edges_.end(), key);
  if (it == edges_.end() || *it != key) return std::nullopt;
  return static_cast<std::size_t>(it - edges_.begin());
}

std::optional<std::size_t> CommGraph::directed_index(NodeId i, NodeId j) const {
  auto e = edge_index(i, j);
  if (!e) return std::nullopt;
  return 2 * *e + (i < j ? 0 : 1);
}

std::uint64_t CommGraph::digest() const {
  std::uint64_t h = splitmix64(node_count());
  for (auto m : modalities_) h = splitmix64(h ^ m);
  for (const auto& e : edges_) h = splitmix64(splitmix64(h ^ e.first) ^ e.second);
  return h;
}

CommGraph build_graph(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges,
                      const std::vector<std::uint32_t>& modalities) {
  if (n == 0) throw StructureError("graph needs at least one node");
  CommGraph g;
  if (modalities.empty()) {
    for (std::size_t i = 0; i < n; ++i) g.modalities_.push_back(static_cast<std::uint32_t>(i));
  } else if (modalities.size() != n) {
    throw StructureError("expected " + std::to_string(n) + " modality tags, got " +
                         std::to_string(modalities.size()));
  } else {
    g.modalities_ = modalities;
  }

  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto [a, b] = edges[k];
    if (a >= n || b >= n) {
      throw StructureError("edge " + std::to_string(k) + " (" + std::to_string(a) + "," +
                           std::to_string(b) + ") references a node outside [0," +
                           std::to_string(n) + ")");
    }
    if (a == b) throw StructureError("edge " + std::to_string(k) + " is a self-loop on node " + std::to_string(a));
    g.edges_.push_back(Edge{std::min(a, b), std::max(a, b)});
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  if (auto dup = std::adjacent_find(g.edges_.begin(), g.edges_.end()); dup != g.edges_.end()) {
    throw StructureError("duplicate edge {" + std::to_string(dup->first) + "," +
                         std::to_string(dup->second) + "}");
  }

  g.adjacency_.assign(n, {});
  for (const auto& e : g.edges_) {
    g.adjacency_[e.first].push_back(e.second);
    g.adjacency_[e.second].push_back(e.first);
    g.directed_.push_back({e.first, e.second});
    g.directed_.push_back({e.second, e.first});
  }
  for (auto& adj : g.adjacency_) std::sort(adj.begin(), adj.end());

  // Label components by flood fill from the lowest unvisited node.
  std::vector<std::size_t> component(n, n);
  std::size_t count = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (component[start] != n) continue;
    std::vector<NodeId> stack{start};
    component[start] = count;
    while (!stack.empty()) {
      NodeId u = stack.back();
      stack.pop_back();
      for (NodeId v : g.adjacency_[u]) {
        if (component[v] == n) {
          component[v] = count;
          stack.push_back(v);
        }
      }
    }
    ++count;
  }
  if (count > 1) {
    std::string msg = "graph is disconnected (" + std::to_string(count) + " components):";
    for (std::size_t c = 0; c < count; ++c) {
      msg += " {";
      bool first = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (component[i] != c) continue;
        msg += (first ? "" : ",") + std::to_string(i);
        first = false;
      }
      msg += "}";
    }
    throw ConnectivityError(msg);
  }
  return g;
}

CommGraph fully_connected_graph(std::size_t n) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  return build_graph(n, edges);
}

const std::vector<NodeId>& neighbors(const CommGraph& g, NodeId i) { return g.neighbors(i); }

const std::vector<DirectedEdge>& directed_edges(const CommGraph& g) { return g.directed_edges(); }

}  // namespace sheafalign

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace sheafalign {

using NodeId = std::size_t;

/// Undirected edge, stored with first < second.
struct Edge {
  NodeId first = 0;
  NodeId second = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct DirectedEdge {
  NodeId from = 0;
  NodeId to = 0;
  friend auto operator<=>(const DirectedEdge&, const DirectedEdge&) = default;
};

/// Static, connected communication graph of single-modality clients.
class CommGraph {
 public:
  std::size_t node_count() const { return modalities_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  std::uint32_t modality(NodeId i) const;
  const std::vector<std::uint32_t>& modalities() const { return modalities_; }

  /// Undirected edges sorted lexicographically.
  const std::vector<Edge>& edges() const { return edges_; }
  /// Both directions of every edge, ordered by (min, max, direction).
  const std::vector<DirectedEdge>& directed_edges() const { return directed_; }
  const std::vector<NodeId>& neighbors(NodeId i) const;

  bool has_edge(NodeId i, NodeId j) const;
  /// Position of {i,j} in edges().
  std::optional<std::size_t> edge_index(NodeId i, NodeId j) const;
  /// Position of (i,j) in directed_edges().
  std::optional<std::size_t> directed_index(NodeId i, NodeId j) const;

  /// 64-bit digest of node count, modality tags and edge list.
  std::uint64_t digest() const;

 private:
  friend CommGraph build_graph(std::size_t, const std::vector<std::pair<NodeId, NodeId>>&,
                               const std::vector<std::uint32_t>&);
  std::vector<std::uint32_t> modalities_;
  std::vector<Edge> edges_;
  std::vector<DirectedEdge> directed_;
  std::vector<std::vector<NodeId>> adjacency_;
};

/// Validates and builds a graph. Throws StructureError for out-of-range
/// indices, self-loops and duplicate edges, ConnectivityError when the graph
/// splits into several components. `modalities` may be empty (node i gets
/// modality i).
CommGraph build_graph(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges,
                      const std::vector<std::uint32_t>& modalities = {});

CommGraph fully_connected_graph(std::size_t n);

/// neighbors() with a range check, as a free function.
const std::vector<NodeId>& neighbors(const CommGraph& g, NodeId i);
const std::vector<DirectedEdge>& directed_edges(const CommGraph& g);

}  // namespace sheafalign

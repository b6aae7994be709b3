#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sheafalign/autodiff.hpp"
#include "sheafalign/graph.hpp"
#include "sheafalign/tensor.hpp"

namespace sheafalign {

/// Cellular sheaf over a communication graph: a stalk R^{d_i} per node, a
/// comparison space R^{d_e} per edge, and for every directed edge (i,j) a
/// restriction map P_ij : R^{d_i} -> R^{d_e} plus a dual map
/// Q_ij : R^{d_e} -> R^{d_i}. Both maps of (i,j) belong to node i.
class SheafStructure {
 public:
  SheafStructure() = default;
  SheafStructure(CommGraph graph, std::vector<std::size_t> stalk_dims,
                 std::vector<std::size_t> edge_dims);

  const CommGraph& graph() const { return graph_; }
  std::size_t stalk_dim(NodeId i) const { return stalk_dims_.at(i); }
  const std::vector<std::size_t>& stalk_dims() const { return stalk_dims_; }
  const std::vector<std::size_t>& edge_dims() const { return edge_dims_; }
  std::size_t edge_dim(NodeId i, NodeId j) const;
  std::size_t total_stalk_dim() const;

  /// Index of (i,j) in graph().directed_edges(); throws StructureError for a non-edge.
  std::size_t directed_index(NodeId i, NodeId j) const;

  const Tensor& restriction(NodeId i, NodeId j) const { return restriction_[directed_index(i, j)]; }
  Tensor& restriction(NodeId i, NodeId j) { return restriction_[directed_index(i, j)]; }
  const Tensor& dual(NodeId i, NodeId j) const { return dual_[directed_index(i, j)]; }
  Tensor& dual(NodeId i, NodeId j) { return dual_[directed_index(i, j)]; }

  /// Indexed by directed edge position.
  std::vector<Tensor>& restrictions() { return restriction_; }
  const std::vector<Tensor>& restrictions() const { return restriction_; }
  std::vector<Tensor>& duals() { return dual_; }
  const std::vector<Tensor>& duals() const { return dual_; }

  /// Throws StructureError unless `g` is the graph this sheaf was built on.
  void require_graph(const CommGraph& g) const;

 private:
  CommGraph graph_;
  std::vector<std::size_t> stalk_dims_;
  std::vector<std::size_t> edge_dims_;
  std::vector<Tensor> restriction_;
  std::vector<Tensor> dual_;
};

/// ceil(min(d_i, d_j) / 2).
std::size_t default_edge_dim(std::size_t d_i, std::size_t d_j);

/// Scaled-uniform init U(-a, a), a = sqrt(6 / (fan_in + fan_out)), seeded per
/// directed edge. Edge dims default to default_edge_dim(). An edge dim larger
/// than the smaller endpoint stalk is allowed and reported in `warnings`.
SheafStructure init_sheaf(const CommGraph& g, const std::vector<std::size_t>& stalk_dims,
                          const std::optional<std::vector<std::size_t>>& edge_dims, std::uint64_t seed,
                          std::vector<std::string>* warnings = nullptr);

/// Per-sample, per-node observation indicator.
class PresenceMask {
 public:
  PresenceMask() = default;
  PresenceMask(std::size_t samples, std::size_t nodes, bool fill = true);

  std::size_t samples() const { return samples_; }
  std::size_t nodes() const { return nodes_; }
  bool operator()(std::size_t n, NodeId i) const { return bits_[n * nodes_ + i] != 0; }
  void set(std::size_t n, NodeId i, bool present) { bits_[n * nodes_ + i] = present ? 1 : 0; }

  /// Samples where both i and j are observed, ascending.
  std::vector<std::size_t> co_observed(NodeId i, NodeId j) const;
  std::vector<bool> pair_mask(NodeId i, NodeId j) const;
  std::size_t present_count(std::size_t n) const;
  std::size_t absent_cells() const;

  PresenceMask select(const std::vector<std::size_t>& rows) const;

  friend bool operator==(const PresenceMask&, const PresenceMask&) = default;

 private:
  std::size_t samples_ = 0;
  std::size_t nodes_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Per-node embeddings of one minibatch plus the presence mask. Rows whose
/// mask entry is false are never read by a loss.
struct Batch {
  std::vector<Tensor> embeddings;
  PresenceMask mask;

  std::size_t size() const { return mask.samples(); }
};

/// True when no edge has a co-observed sample (nothing to align).
bool is_degenerate(const Batch& batch, const CommGraph& g);

/// Restriction and dual maps bound to a tape, indexed like
/// SheafStructure::restrictions().
struct SheafVars {
  const SheafStructure* sheaf = nullptr;
  std::vector<Var> restriction;
  std::vector<Var> dual;

  Var P(NodeId i, NodeId j) const { return restriction[sheaf->directed_index(i, j)]; }
  Var Q(NodeId i, NodeId j) const { return dual[sheaf->directed_index(i, j)]; }
};

/// Puts every map on the tape, as leaves when `trainable`, else as constants.
SheafVars bind_sheaf(Tape& tape, const SheafStructure& s, bool trainable = true);

/// Rows of h (B x d_i) mapped through P_ij: h P_ij^T, shape B x d_e.
Tensor project(const SheafStructure& s, NodeId i, NodeId j, const Tensor& h);
Var project(const SheafVars& s, NodeId i, NodeId j, Var h);

/// Rows of p (B x d_e) mapped through Q_ij: p Q_ij^T, shape B x d_i.
Tensor lift(const SheafStructure& s, NodeId i, NodeId j, const Tensor& p);
Var lift(const SheafVars& s, NodeId i, NodeId j, Var p);

/// Dense block sheaf Laplacian of size (sum d_i)^2. Diagnostics only.
Tensor assemble_laplacian(const SheafStructure& s, const CommGraph& g);

/// Offsets of each node's block inside the stacked vector (sum d_i).
std::vector<std::size_t> stalk_offsets(const SheafStructure& s);

struct QuadraticForm {
  std::vector<double> per_sample;
  double total = 0.0;
};

/// sum over edges of mask_{(i,j),n} * ||P_ij h_{i,n} - P_ji h_{j,n}||^2, per
/// sample and summed over the batch.
QuadraticForm quadratic_form_edgewise(const SheafStructure& s, const CommGraph& g, const Batch& batch);

/// Traced batch total of the same quantity.
Var quadratic_form_edgewise(const SheafVars& s, const std::vector<Var>& embeddings,
                            const PresenceMask& mask);

}  // namespace sheafalign

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sheafalign/autodiff.hpp"
#include "sheafalign/graph.hpp"
#include "sheafalign/sheaf.hpp"

namespace sheafalign {

struct LossWeights {
  double lambda = 1.0;  // sheaf Laplacian consistency
  double beta = 1.0;    // edge InfoNCE
  double gamma = 0.1;   // dual-map reconstruction
  double tau = 0.1;     // InfoNCE temperature, strictly positive
  /// Average both anchor directions per edge instead of anchoring on the lower node only.
  bool symmetric_contrastive = false;

  void validate() const;
};

// Edge-level building blocks. They take rows that are already restricted to
// co-observed samples, so masked rows never reach them. `batch_size` is the
// full minibatch size B used as the 1/B normaliser.

/// ||p_i - p_j||^2 summed over the given rows.
Var laplacian_edge_term(Var p_i_rows, Var p_j_rows);

/// -(1/B) sum_n log softmax_m(sim(a_n, o_m) / tau)[n], negatives drawn from
/// the co-observed rows of `other`.
Var contrastive_present(Var anchor_rows, Var other_rows, std::size_t batch_size, double tau);

/// (1/B) sum_n ||Q p_{j,n} - h_{i,n}||^2 with p_j = P_ji h_j already applied.
Var reconstruction_from_projection(Var dual, Var p_j_rows, Var h_i_rows, std::size_t batch_size);

/// Edge InfoNCE on full B x d_e projections with a per-sample mask.
Var contrastive_edge_loss(Var p_i, Var p_j, const std::vector<bool>& mask, double tau);
double contrastive_edge_loss(const Tensor& p_i, const Tensor& p_j, const std::vector<bool>& mask,
                             double tau);

/// Sum over the batch of the edge-wise quadratic form (unweighted).
Var laplacian_loss(const SheafVars& s, const std::vector<Var>& embeddings, const PresenceMask& mask);
double laplacian_loss(const SheafStructure& s, const CommGraph& g, const Batch& batch);

/// (1/B) sum_n mask_n ||Q_ij P_ji h_{j,n} - h_{i,n}||^2.
Var reconstruction_loss(const SheafVars& s, NodeId i, NodeId j, Var h_i, Var h_j,
                        const std::vector<bool>& mask);
double reconstruction_loss(const SheafStructure& s, NodeId i, NodeId j, const Tensor& h_i,
                           const Tensor& h_j, const std::vector<bool>& mask);

/// Unweighted sums of each term alongside the weighted total.
struct LossBreakdown {
  double total = 0.0;
  double laplacian = 0.0;
  double contrastive = 0.0;
  double reconstruction = 0.0;
};

struct TracedLoss {
  Var total;
  LossBreakdown breakdown;
};

/// lambda * laplacian + beta * (one InfoNCE per undirected edge) + gamma *
/// (reconstruction over both directions of every edge).
TracedLoss total_loss(const SheafVars& s, const std::vector<Var>& embeddings, const PresenceMask& mask,
                      const LossWeights& w);
LossBreakdown total_loss(const SheafStructure& s, const CommGraph& g, const Batch& batch,
                         const LossWeights& w);

/// total_loss restricted to the edges incident to node i. An isolated node
/// yields zero and a message in `warnings`.
TracedLoss node_loss(const SheafVars& s, const std::vector<Var>& embeddings, const PresenceMask& mask,
                     NodeId i, const LossWeights& w, std::vector<std::string>* warnings = nullptr);
LossBreakdown node_loss(const SheafStructure& s, const CommGraph& g, NodeId i, const Batch& batch,
                        const LossWeights& w, std::vector<std::string>* warnings = nullptr);

}  // namespace sheafalign

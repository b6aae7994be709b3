#include "sheafalign/losses.hpp"

#include "sheafalign/error.hpp"

namespace sheafalign {

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ContractError("temperature tau must be > 0, got " + std::to_string(tau));
  if (lambda < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw ContractError("loss weights lambda, beta, gamma must be >= 0");
  }
}

Var laplacian_edge_term(Var p_i_rows, Var p_j_rows) { return sum_squares(p_i_rows - p_j_rows); }

Var contrastive_present(Var anchor_rows, Var other_rows, std::size_t batch_size, double tau) {
  if (batch_size == 0) throw ContractError("contrastive loss with batch size 0");
  if (anchor_rows.rows() == 0) return anchor_rows.tape()->constant(Tensor(1, 1));
  Var logits = (1.0 / tau) * rowwise_cosine_similarity(anchor_rows, other_rows);
  Var log_prob = diagonal(logits) - logsumexp_rows(logits);
  return (-1.0 / static_cast<double>(batch_size)) * sum(log_prob);
}

Var reconstruction_from_projection(Var dual, Var p_j_rows, Var h_i_rows, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("reconstruction loss with batch size 0");
  Var recon = matmul(p_j_rows, transpose(dual));
  return (1.0 / static_cast<double>(batch_size)) * sum_squares(recon - h_i_rows);
}

namespace {

std::vector<std::size_t> present_rows(const std::vector<bool>& mask) {
  std::vector<std::size_t> rows;
  for (std::size_t n = 0; n < mask.size(); ++n)
    if (mask[n]) rows.push_back(n);
  return rows;
}

struct EdgeTerms {
  Var laplacian;
  Var contrastive;
  Var recon_forward;   // reconstruct first from second
  Var recon_backward;  // reconstruct second from first
};

// All terms of one undirected edge {a, b}, a < b.
EdgeTerms edge_terms(const SheafVars& s, const std::vector<Var>& h, const PresenceMask& mask, NodeId a,
                     NodeId b, const LossWeights& w) {
  const std::size_t B = mask.samples();
  const auto rows = mask.co_observed(a, b);
  Tape* tape = h.at(a).tape();
  if (rows.empty()) {
    Var zero = tape->constant(Tensor(1, 1));
    return {zero, zero, zero, zero};
  }
  Var ha = gather_rows(h[a], rows);
  Var hb = gather_rows(h[b], rows);
  Var pa = project(s, a, b, ha);
  Var pb = project(s, b, a, hb);
  EdgeTerms t;
  t.laplacian = laplacian_edge_term(pa, pb);
  t.contrastive = contrastive_present(pa, pb, B, w.tau);
  if (w.symmetric_contrastive) {
    t.contrastive = 0.5 * (t.contrastive + contrastive_present(pb, pa, B, w.tau));
  }
  t.recon_forward = reconstruction_from_projection(s.Q(a, b), pb, ha, B);
  t.recon_backward = reconstruction_from_projection(s.Q(b, a), pa, hb, B);
  return t;
}

TracedLoss combine(Tape* tape, const std::vector<EdgeTerms>& terms, const LossWeights& w) {
  Var lap = tape->constant(Tensor(1, 1));
  Var con = lap;
  Var rec = lap;
  for (const auto& t : terms) {
    lap = lap + t.laplacian;
    con = con + t.contrastive;
    rec = rec + t.recon_forward + t.recon_backward;
  }
  TracedLoss out;
  out.total = w.lambda * lap + w.beta * con + w.gamma * rec;
  out.breakdown.total = out.total.value().item();
  out.breakdown.laplacian = lap.value().item();
  out.breakdown.contrastive = con.value().item();
  out.breakdown.reconstruction = rec.value().item();
  return out;
}

void check_batch(const Batch& batch, const CommGraph& g) {
  if (batch.embeddings.size() != g.node_count() || batch.mask.nodes() != g.node_count()) {
    throw DimensionError("batch does not match graph of " + std::to_string(g.node_count()) + " nodes");
  }
}

std::vector<Var> constants(Tape& tape, const std::vector<Tensor>& xs) {
  std::vector<Var> out;
  for (const auto& x : xs) out.push_back(tape.constant(x));
  return out;
}

}  // namespace

Var contrastive_edge_loss(Var p_i, Var p_j, const std::vector<bool>& mask, double tau) {
  require_same_shape(p_i.value(), p_j.value(), "contrastive_edge_loss");
  if (mask.size() != p_i.rows()) {
    throw DimensionError("contrastive_edge_loss: mask of " + std::to_string(mask.size()) +
                         " entries for " + p_i.value().shape_string());
  }
  if (!(tau > 0.0)) throw ContractError("temperature tau must be > 0");
  const auto rows = present_rows(mask);
  if (rows.empty()) throw ContractError("contrastive_edge_loss needs at least one present sample");
  return contrastive_present(gather_rows(p_i, rows), gather_rows(p_j, rows), mask.size(), tau);
}

double contrastive_edge_loss(const Tensor& p_i, const Tensor& p_j, const std::vector<bool>& mask,
                             double tau) {
  Tape tape;
  return contrastive_edge_loss(tape.constant(p_i), tape.constant(p_j), mask, tau).value().item();
}

Var laplacian_loss(const SheafVars& s, const std::vector<Var>& embeddings, const PresenceMask& mask) {
  return quadratic_form_edgewise(s, embeddings, mask);
}

double laplacian_loss(const SheafStructure& s, const CommGraph& g, const Batch& batch) {
  return quadratic_form_edgewise(s, g, batch).total;
}

Var reconstruction_loss(const SheafVars& s, NodeId i, NodeId j, Var h_i, Var h_j,
                        const std::vector<bool>& mask) {
  if (mask.size() != h_i.rows() || mask.size() != h_j.rows()) {
    throw DimensionError("reconstruction_loss: mask length does not match batch");
  }
  const auto rows = present_rows(mask);
  if (rows.empty()) return h_i.tape()->constant(Tensor(1, 1));
  Var p_j = project(s, j, i, gather_rows(h_j, rows));
  return reconstruction_from_projection(s.Q(i, j), p_j, gather_rows(h_i, rows), mask.size());
}

double reconstruction_loss(const SheafStructure& s, NodeId i, NodeId j, const Tensor& h_i,
                           const Tensor& h_j, const std::vector<bool>& mask) {
  Tape tape;
  SheafVars sv = bind_sheaf(tape, s, false);
  return reconstruction_loss(sv, i, j, tape.constant(h_i), tape.constant(h_j), mask).value().item();
}

TracedLoss total_loss(const SheafVars& s, const std::vector<Var>& embeddings, const PresenceMask& mask,
                      const LossWeights& w) {
  w.validate();
  std::vector<EdgeTerms> terms;
  for (const auto& e : s.sheaf->graph().edges())
    terms.push_back(edge_terms(s, embeddings, mask, e.first, e.second, w));
  return combine(embeddings.at(0).tape(), terms, w);
}

LossBreakdown total_loss(const SheafStructure& s, const CommGraph& g, const Batch& batch,
                         const LossWeights& w) {
  s.require_graph(g);
  check_batch(batch, g);
  Tape tape;
  SheafVars sv = bind_sheaf(tape, s, false);
  return total_loss(sv, constants(tape, batch.embeddings), batch.mask, w).breakdown;
}

TracedLoss node_loss(const SheafVars& s, const std::vector<Var>& embeddings, const PresenceMask& mask,
                     NodeId i, const LossWeights& w, std::vector<std::string>* warnings) {
  w.validate();
  const CommGraph& g = s.sheaf->graph();
  const auto& nbrs = g.neighbors(i);
  if (nbrs.empty() && warnings != nullptr) {
    warnings->push_back("node " + std::to_string(i) + " has no incident edges; its loss is zero");
  }
  std::vector<EdgeTerms> terms;
  for (NodeId j : nbrs) terms.push_back(edge_terms(s, embeddings, mask, std::min(i, j), std::max(i, j), w));
  return combine(embeddings.at(i).tape(), terms, w);
}

LossBreakdown node_loss(const SheafStructure& s, const CommGraph& g, NodeId i, const Batch& batch,
                        const LossWeights& w, std::vector<std::string>* warnings) {
  s.require_graph(g);
  check_batch(batch, g);
  Tape tape;
  SheafVars sv = bind_sheaf(tape, s, false);
  return node_loss(sv, constants(tape, batch.embeddings), batch.mask, i, w, warnings).breakdown;
}

}  // namespace sheafalign

#include "sheafalign/sheaf.hpp"

#include <cmath>
#include <numeric>

#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

SheafStructure::SheafStructure(CommGraph graph, std::vector<std::size_t> stalk_dims,
                               std::vector<std::size_t> edge_dims)
    : graph_(std::move(graph)), stalk_dims_(std::move(stalk_dims)), edge_dims_(std::move(edge_dims)) {
  if (stalk_dims_.size() != graph_.node_count()) {
    throw StructureError("expected " + std::to_string(graph_.node_count()) + " stalk dims, got " +
                         std::to_string(stalk_dims_.size()));
  }
  if (edge_dims_.size() != graph_.edge_count()) {
    throw StructureError("expected " + std::to_string(graph_.edge_count()) + " edge dims, got " +
                         std::to_string(edge_dims_.size()));
  }
  for (std::size_t i = 0; i < stalk_dims_.size(); ++i)
    if (stalk_dims_[i] == 0) throw StructureError("stalk dim of node " + std::to_string(i) + " is 0");
  for (std::size_t e = 0; e < edge_dims_.size(); ++e)
    if (edge_dims_[e] == 0) throw StructureError("edge dim of edge " + std::to_string(e) + " is 0");
  for (const auto& de : graph_.directed_edges()) {
    const std::size_t d_e = edge_dims_[*graph_.edge_index(de.from, de.to)];
    restriction_.emplace_back(d_e, stalk_dims_[de.from]);
    dual_.emplace_back(stalk_dims_[de.from], d_e);
  }
}

std::size_t SheafStructure::directed_index(NodeId i, NodeId j) const {
  auto k = graph_.directed_index(i, j);
  if (!k) {
    throw StructureError("(" + std::to_string(i) + "," + std::to_string(j) + ") is not an edge");
  }
  return *k;
}

std::size_t SheafStructure::edge_dim(NodeId i, NodeId j) const {
  auto e = graph_.edge_index(i, j);
  if (!e) throw StructureError("(" + std::to_string(i) + "," + std::to_string(j) + ") is not an edge");
  return edge_dims_[*e];
}

std::size_t SheafStructure::total_stalk_dim() const {
  return std::accumulate(stalk_dims_.begin(), stalk_dims_.end(), std::size_t{0});
}

void SheafStructure::require_graph(const CommGraph& g) const {
  if (g.digest() != graph_.digest()) throw StructureError("sheaf was built on a different graph");
}

std::size_t default_edge_dim(std::size_t d_i, std::size_t d_j) {
  const std::size_t d = std::min(d_i, d_j);
  return (d + 1) / 2;
}

SheafStructure init_sheaf(const CommGraph& g, const std::vector<std::size_t>& stalk_dims,
                          const std::optional<std::vector<std::size_t>>& edge_dims, std::uint64_t seed,
                          std::vector<std::string>* warnings) {
  if (stalk_dims.size() != g.node_count()) {
    throw StructureError("expected " + std::to_string(g.node_count()) + " stalk dims, got " +
                         std::to_string(stalk_dims.size()));
  }
  std::vector<std::size_t> dims;
  if (edge_dims) {
    dims = *edge_dims;
  } else {
    for (const auto& e : g.edges()) dims.push_back(default_edge_dim(stalk_dims[e.first], stalk_dims[e.second]));
  }
  if (dims.size() == g.edge_count() && warnings != nullptr) {
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const auto& e = g.edges()[k];
      const std::size_t dmin = std::min(stalk_dims[e.first], stalk_dims[e.second]);
      if (dims[k] > dmin) {
        warnings->push_back("edge {" + std::to_string(e.first) + "," + std::to_string(e.second) +
                            "} has comparison dim " + std::to_string(dims[k]) +
                            " above the smaller stalk dim " + std::to_string(dmin));
      }
    }
  }

  SheafStructure s(g, stalk_dims, std::move(dims));
  auto fill = [](Tensor& t, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& v : t.data()) v = dist(rng);
  };
  for (std::size_t k = 0; k < s.restrictions().size(); ++k) {
    Rng rp = make_rng(seed, "sheaf.restriction", k);
    fill(s.restrictions()[k], rp);
    Rng rq = make_rng(seed, "sheaf.dual", k);
    fill(s.duals()[k], rq);
  }
  return s;
}

PresenceMask::PresenceMask(std::size_t samples, std::size_t nodes, bool fill)
    : samples_(samples), nodes_(nodes), bits_(samples * nodes, fill ? 1 : 0) {}

std::vector<std::size_t> PresenceMask::co_observed(NodeId i, NodeId j) const {
  std::vector<std::size_t> rows;
  for (std::size_t n = 0; n < samples_; ++n)
    if ((*this)(n, i) && (*this)(n, j)) rows.push_back(n);
  return rows;
}

std::vector<bool> PresenceMask::pair_mask(NodeId i, NodeId j) const {
  std::vector<bool> m(samples_);
  for (std::size_t n = 0; n < samples_; ++n) m[n] = (*this)(n, i) && (*this)(n, j);
  return m;
}

std::size_t PresenceMask::present_count(std::size_t n) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < nodes_; ++i) c += (*this)(n, i) ? 1 : 0;
  return c;
}

std::size_t PresenceMask::absent_cells() const {
  std::size_t c = 0;
  for (auto b : bits_) c += b == 0 ? 1 : 0;
  return c;
}

PresenceMask PresenceMask::select(const std::vector<std::size_t>& rows) const {
  PresenceMask out(rows.size(), nodes_, false);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t i = 0; i < nodes_; ++i) out.set(r, i, (*this)(rows[r], i));
  return out;
}

bool is_degenerate(const Batch& batch, const CommGraph& g) {
  for (const auto& e : g.edges())
    for (std::size_t n = 0; n < batch.size(); ++n)
      if (batch.mask(n, e.first) && batch.mask(n, e.second)) return false;
  return true;
}

SheafVars bind_sheaf(Tape& tape, const SheafStructure& s, bool trainable) {
  SheafVars v;
  v.sheaf = &s;
  for (const auto& p : s.restrictions()) v.restriction.push_back(trainable ? tape.leaf(p) : tape.constant(p));
  for (const auto& q : s.duals()) v.dual.push_back(trainable ? tape.leaf(q) : tape.constant(q));
  return v;
}

Tensor project(const SheafStructure& s, NodeId i, NodeId j, const Tensor& h) {
  return matmul(h, transpose(s.restriction(i, j)));
}

Var project(const SheafVars& s, NodeId i, NodeId j, Var h) { return matmul(h, transpose(s.P(i, j))); }

Tensor lift(const SheafStructure& s, NodeId i, NodeId j, const Tensor& p) {
  return matmul(p, transpose(s.dual(i, j)));
}

Var lift(const SheafVars& s, NodeId i, NodeId j, Var p) { return matmul(p, transpose(s.Q(i, j))); }

std::vector<std::size_t> stalk_offsets(const SheafStructure& s) {
  std::vector<std::size_t> off(s.stalk_dims().size() + 1, 0);
  for (std::size_t i = 0; i < s.stalk_dims().size(); ++i) off[i + 1] = off[i] + s.stalk_dims()[i];
  return off;
}

Tensor assemble_laplacian(const SheafStructure& s, const CommGraph& g) {
  s.require_graph(g);
  const auto off = stalk_offsets(s);
  Tensor L(off.back(), off.back());
  auto add_block = [&](NodeId row, NodeId col, const Tensor& block, double sign) {
    for (std::size_t r = 0; r < block.rows(); ++r)
      for (std::size_t c = 0; c < block.cols(); ++c) L(off[row] + r, off[col] + c) += sign * block(r, c);
  };
  for (const auto& e : g.edges()) {
    const Tensor& Pi = s.restriction(e.first, e.second);
    const Tensor& Pj = s.restriction(e.second, e.first);
    add_block(e.first, e.first, matmul(transpose(Pi), Pi), 1.0);
    add_block(e.second, e.second, matmul(transpose(Pj), Pj), 1.0);
    add_block(e.second, e.first, matmul(transpose(Pj), Pi), -1.0);
    add_block(e.first, e.second, matmul(transpose(Pi), Pj), -1.0);
  }
  return L;
}

QuadraticForm quadratic_form_edgewise(const SheafStructure& s, const CommGraph& g, const Batch& batch) {
  s.require_graph(g);
  if (batch.embeddings.size() != g.node_count()) {
    throw DimensionError("batch has " + std::to_string(batch.embeddings.size()) + " nodes, graph has " +
                         std::to_string(g.node_count()));
  }
  QuadraticForm q;
  q.per_sample.assign(batch.size(), 0.0);
  for (const auto& e : g.edges()) {
    const auto rows = batch.mask.co_observed(e.first, e.second);
    if (rows.empty()) continue;
    const Tensor pi = project(s, e.first, e.second, gather_rows(batch.embeddings[e.first], rows));
    const Tensor pj = project(s, e.second, e.first, gather_rows(batch.embeddings[e.second], rows));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < pi.cols(); ++c) {
        const double d = pi(r, c) - pj(r, c);
        acc += d * d;
      }
      q.per_sample[rows[r]] += acc;
    }
  }
  for (double v : q.per_sample) q.total += v;
  return q;
}

Var quadratic_form_edgewise(const SheafVars& s, const std::vector<Var>& embeddings,
                            const PresenceMask& mask) {
  const CommGraph& g = s.sheaf->graph();
  Tape* tape = embeddings.at(0).tape();
  Var total = tape->constant(Tensor(1, 1));
  for (const auto& e : g.edges()) {
    const auto rows = mask.co_observed(e.first, e.second);
    if (rows.empty()) continue;
    Var pi = project(s, e.first, e.second, gather_rows(embeddings[e.first], rows));
    Var pj = project(s, e.second, e.first, gather_rows(embeddings[e.second], rows));
    total = total + sum_squares(pi - pj);
  }
  return total;
}

}  // namespace sheafalign

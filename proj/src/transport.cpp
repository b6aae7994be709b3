#include "sheafalign/transport.hpp"

#include "sheafalign/error.hpp"

namespace sheafalign {

void TransportLedger::credit(std::uint64_t round, NodeId from, NodeId to, MessageKind kind,
                             std::uint64_t bytes) {
  entries_.push_back({round, from, to, kind, bytes});
  total_ += bytes;
}

std::uint64_t TransportLedger::bytes_sent_by(NodeId i) const {
  std::uint64_t b = 0;
  for (const auto& e : entries_)
    if (e.from == i) b += e.bytes;
  return b;
}

std::uint64_t TransportLedger::bytes_received_by(NodeId i) const {
  std::uint64_t b = 0;
  for (const auto& e : entries_)
    if (e.to == i) b += e.bytes;
  return b;
}

std::uint64_t TransportLedger::bytes_in_round(std::uint64_t round) const {
  std::uint64_t b = 0;
  for (const auto& e : entries_)
    if (e.round == round) b += e.bytes;
  return b;
}

Transport::Transport(std::size_t nodes, TransportLedger& ledger, bool count_adjoint_messages)
    : outbox_(nodes), inbox_(nodes), ledger_(&ledger), count_adjoints_(count_adjoint_messages) {}

void Transport::post(Message msg) {
  if (msg.from >= outbox_.size() || msg.to >= inbox_.size()) throw StructureError("message to unknown node");
  outbox_[msg.from].push_back(std::move(msg));
}

void Transport::flush() {
  for (auto& box : outbox_) {
    for (auto& msg : box) {
      if (msg.kind == MessageKind::projection || count_adjoints_) {
        ledger_->credit(msg.round, msg.from, msg.to, msg.kind, wire_bytes(msg.payload));
      }
      inbox_[msg.to].push_back(std::move(msg));
    }
    box.clear();
  }
}

std::vector<Message> Transport::take(NodeId node) {
  std::vector<Message> out;
  out.swap(inbox_.at(node));
  return out;
}

std::vector<EdgeExchange> exchange_projections(const SheafStructure& s, const std::vector<Tensor>& embeddings,
                                               const PresenceMask& mask, std::uint64_t round,
                                               TransportLedger& ledger) {
  const CommGraph& g = s.graph();
  Transport net(g.node_count(), ledger);
  for (NodeId i = 0; i < g.node_count(); ++i) {
    for (NodeId j : g.neighbors(i)) {
      const auto rows = mask.co_observed(i, j);
      if (rows.empty()) continue;
      net.post({i, j, round, MessageKind::projection, project(s, i, j, gather_rows(embeddings.at(i), rows))});
    }
  }
  net.flush();

  std::vector<EdgeExchange> out;
  for (const auto& e : g.edges()) out.push_back({e, mask.co_observed(e.first, e.second), {}, {}});
  for (NodeId j = 0; j < g.node_count(); ++j) {
    for (auto& msg : net.take(j)) {
      auto& ex = out[*g.edge_index(msg.from, msg.to)];
      (msg.from == ex.edge.first ? ex.first : ex.second) = std::move(msg.payload);
    }
  }
  return out;
}

}  // namespace sheafalign

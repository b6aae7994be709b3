#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sheafalign/graph.hpp"
#include "sheafalign/sheaf.hpp"
#include "sheafalign/tensor.hpp"

namespace sheafalign {

enum class MessageKind : std::uint8_t {
  /// Comparison-space projections of co-observed samples.
  projection,
  /// Adjoint of a neighbor's reconstruction term w.r.t. the projection it received.
  reconstruction_adjoint,
};

/// Wire size of a payload: real32 entries.
inline std::uint64_t wire_bytes(const Tensor& payload) { return static_cast<std::uint64_t>(payload.size()) * 4; }

struct LedgerEntry {
  std::uint64_t round = 0;
  NodeId from = 0;
  NodeId to = 0;
  MessageKind kind = MessageKind::projection;
  std::uint64_t bytes = 0;
};

/// Exact byte accounting of simulated traffic.
class TransportLedger {
 public:
  void credit(std::uint64_t round, NodeId from, NodeId to, MessageKind kind, std::uint64_t bytes);

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::uint64_t total_bytes() const { return total_; }
  std::uint64_t bytes_sent_by(NodeId i) const;
  std::uint64_t bytes_received_by(NodeId i) const;
  std::uint64_t bytes_in_round(std::uint64_t round) const;
  std::size_t message_count() const { return entries_.size(); }

 private:
  std::vector<LedgerEntry> entries_;
  std::uint64_t total_ = 0;
};

struct Message {
  NodeId from = 0;
  NodeId to = 0;
  std::uint64_t round = 0;
  MessageKind kind = MessageKind::projection;
  Tensor payload;
  /// Side scalar (reconstruction term value); not counted on the wire.
  double scalar = 0.0;
};

/// In-process network with ideal, in-order links. Each node writes only its
/// own outbox, so node workers can post concurrently; flush() is the round
/// barrier that delivers everything in sender order and credits the ledger.
class Transport {
 public:
  Transport(std::size_t nodes, TransportLedger& ledger, bool count_adjoint_messages = false);

  void post(Message msg);
  void flush();
  /// Messages delivered to `node` since the last take, in delivery order.
  std::vector<Message> take(NodeId node);

 private:
  std::vector<std::vector<Message>> outbox_;
  std::vector<std::vector<Message>> inbox_;
  TransportLedger* ledger_;
  bool count_adjoints_;
};

/// Projections of one undirected edge {first < second} after the exchange.
struct EdgeExchange {
  Edge edge;
  std::vector<std::size_t> rows;  // co-observed batch rows
  Tensor first;                   // P_{first,second} h_first over rows
  Tensor second;                  // P_{second,first} h_second over rows
};

/// Every node projects its co-observed rows onto each incident comparison
/// space and sends them to the neighbor; both directions are credited.
std::vector<EdgeExchange> exchange_projections(const SheafStructure& s, const std::vector<Tensor>& embeddings,
                                               const PresenceMask& mask, std::uint64_t round,
                                               TransportLedger& ledger);

}  // namespace sheafalign

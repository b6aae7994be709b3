#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sheafalign/datagen.hpp"
#include "sheafalign/graph.hpp"
#include "sheafalign/losses.hpp"
#include "sheafalign/model.hpp"
#include "sheafalign/optim.hpp"
#include "sheafalign/sheaf.hpp"
#include "sheafalign/transport.hpp"

namespace sheafalign {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  LossWeights weights;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Written after the last epoch when non-empty.
  std::filesystem::path checkpoint_path;
  OptimizerKind optimizer = OptimizerKind::adam;
  /// Also credit reconstruction-adjoint messages in the ledger.
  bool count_gradient_messages = false;
  /// Node workers per phase.
  std::size_t threads = 1;

  void validate() const;
  /// Digest of the hyperparameters that affect the trajectory.
  std::uint64_t digest() const;
};

/// Everything the nodes learn: one encoder per node and the sheaf maps.
struct Model {
  std::vector<Encoder> encoders;
  SheafStructure sheaf;

  const CommGraph& graph() const { return sheaf.graph(); }
  /// Digest of graph, dimensions and encoder architecture.
  std::uint64_t structure_digest() const;
};

struct ModelSpec {
  std::vector<std::size_t> input_dims;
  std::vector<std::size_t> stalk_dims;
  std::optional<std::vector<std::size_t>> edge_dims;
  /// Hidden widths shared by all encoders; empty means one layer of 2 * d_i.
  std::optional<std::vector<std::size_t>> hidden_widths;
  Nonlinearity nonlinearity = Nonlinearity::relu;
};

Model init_model(const CommGraph& g, const ModelSpec& spec, std::uint64_t seed,
                 std::vector<std::string>* warnings = nullptr);

/// Pointers to the parameters node i owns, in a fixed order: encoder
/// (W0, b0, W1, b1, ...) then (P_ij, Q_ij) for each neighbor j ascending.
std::vector<Tensor*> owned_parameters(Model& model, NodeId i);
std::vector<const Tensor*> owned_parameters(const Model& model, NodeId i);

struct TrainState {
  Model model;
  /// Per node, one Adam state per owned parameter.
  std::vector<std::vector<AdamState>> optimizer;
  /// Per node, per owned parameter: number of updates applied.
  std::vector<std::vector<std::uint64_t>> versions;
  std::size_t epochs_completed = 0;
  std::uint64_t rounds_completed = 0;
  std::uint64_t bytes_cumulative = 0;

  friend bool operator==(const TrainState& a, const TrainState& b);
};

TrainState init_train_state(Model model);

struct RoundOutcome {
  LossBreakdown loss;
  bool skipped = false;
};

/// One synchronous round of the decentralized procedure on a minibatch:
/// encode, exchange projections, exchange reconstruction adjoints, then every
/// node in `update_nodes` (all when empty) steps its own parameters on its
/// incident-edge loss. `inputs` holds one B x in_dim matrix per node.
RoundOutcome decentralized_round(TrainState& state, const std::vector<Tensor>& inputs, const PresenceMask& mask,
                                 const TrainConfig& cfg, Transport& transport,
                                 const std::vector<NodeId>& update_nodes = {});

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // mean over non-skipped batches
  std::uint64_t bytes_cumulative = 0;
  std::size_t batches = 0;
  std::size_t skipped = 0;
};

std::string metrics_json_line(const EpochMetrics& m);

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> metrics;
  TransportLedger ledger;
  std::vector<std::string> warnings;
};

/// Runs epochs state.epochs_completed + 1 .. cfg.epochs over `ds`.
TrainResult train(const MultiViewDataset& ds, TrainState state, const TrainConfig& cfg);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state, std::uint64_t config_digest);
/// Throws ChecksumError on corruption, ParseError on malformed or
/// wrong-version files, DigestError when `expected_graph` differs.
TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes, const CommGraph* expected_graph = nullptr,
                             std::uint64_t* config_digest = nullptr);

void save_checkpoint(const TrainState& state, std::uint64_t config_digest, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, const CommGraph* expected_graph = nullptr,
                           std::uint64_t* config_digest = nullptr);

/// Runs fn(0..count-1) on up to `threads` workers. Exceptions are rethrown
/// for the lowest failing index.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace sheafalign

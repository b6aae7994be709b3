#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sheafalign/datagen.hpp"
#include "sheafalign/eval.hpp"
#include "sheafalign/graph.hpp"
#include "sheafalign/trainer.hpp"

namespace sheafalign {

struct GeneratorConfig {
  std::uint32_t num_classes = 3;
  std::size_t samples_per_class = 300;
  RedundancyControl control;
  /// Presence dropout applied to the generated data.
  double p_drop = 0.0;
};

struct DataConfig {
  /// SHAF1 file; when empty the generator is used.
  std::filesystem::path path;
  GeneratorConfig generator;
  /// Per-class split into train / test; 0 trains and evaluates on everything.
  std::size_t train_per_class = 0;
};

struct EvalConfig {
  std::vector<std::size_t> ks{1, 5, 10};
  std::vector<std::size_t> shots{1, 5};
  std::vector<double> p_drop{0.01, 0.1};
  NodeId reference_node = 0;
  NodeId task_node = 0;
  NeighborSelection neighbor_selection = NeighborSelection::lowest_index;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t nodes = 0;
  std::vector<Edge> edges;  // as listed; fully connected when omitted
  std::vector<std::string> modalities;
  std::vector<std::size_t> stalk_dims;
  /// Per listed edge; default rule when absent.
  std::optional<std::vector<std::size_t>> edge_dims;
  std::optional<std::vector<std::size_t>> hidden_widths;
  Nonlinearity nonlinearity = Nonlinearity::relu;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  CommGraph graph() const;
  /// Edge dims reordered to the graph's sorted edge order.
  std::optional<std::vector<std::size_t>> sorted_edge_dims() const;
  ModelSpec model_spec(const std::vector<std::size_t>& input_dims) const;
  /// The configuration with every default filled in.
  nlohmann::ordered_json resolved() const;
};

/// Validates a config document. Errors are ConfigError with a field locator.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config(const std::filesystem::path& path);

/// Applies `a.b.c=value` to `doc`; the value is read as JSON when it parses,
/// otherwise as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Loads or generates the dataset and splits it into (train, test).
std::pair<MultiViewDataset, MultiViewDataset> load_data(const RunConfig& cfg);

}  // namespace sheafalign

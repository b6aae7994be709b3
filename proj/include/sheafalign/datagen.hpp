#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "sheafalign/sheaf.hpp"
#include "sheafalign/tensor.hpp"

namespace sheafalign {

/// Knobs of the synthetic multi-view generator. Each sample has a latent
/// shared vector (class center + per-sample variation, seen by every view)
/// and one private unique vector per view.
struct RedundancyControl {
  std::size_t shared_dim = 8;
  std::size_t unique_dim = 4;
  double noise_sigma = 0.1;
  /// Observation width per view; 0 means shared_dim + unique_dim.
  std::size_t obs_dim = 0;
  /// Std of class-center coordinates; per-sample shared variation has std 1.
  double class_separation = 3.0;
  /// View transforms are random semi-orthogonal latent x obs maps; this
  /// replaces them with the identity (requires obs_dim == latent dim).
  bool identity_transforms = false;

  std::size_t latent_dim() const { return shared_dim + unique_dim; }
  std::size_t observation_dim() const { return obs_dim == 0 ? latent_dim() : obs_dim; }
};

struct MultiViewDataset {
  /// 0 means unlabeled.
  std::uint32_t num_classes = 0;
  std::vector<std::uint32_t> labels;
  /// One samples x in_dim observation matrix per node.
  std::vector<Tensor> views;
  PresenceMask mask;

  std::size_t sample_count() const { return mask.samples(); }
  std::size_t node_count() const { return views.size(); }
  bool labeled() const { return num_classes > 0; }

  MultiViewDataset select(const std::vector<std::size_t>& rows) const;

  friend bool operator==(const MultiViewDataset&, const MultiViewDataset&) = default;
};

/// Class-major sample order: rows [c * samples_per_class, (c+1) * samples_per_class)
/// belong to class c. Values are rounded to float precision so that a
/// generated dataset and its SHAF1 file agree exactly.
MultiViewDataset generate_multiview(std::uint32_t num_classes, std::size_t samples_per_class,
                                    const RedundancyControl& ctrl, std::size_t n_views, std::uint64_t seed);

/// Per class, the first `train_per_class` rows go to the first dataset and the
/// rest to the second.
std::pair<MultiViewDataset, MultiViewDataset> split_per_class(const MultiViewDataset& ds,
                                                              std::size_t train_per_class);

/// Marks each (sample, node) cell absent with probability p_drop. A sample
/// left with no modality is re-rolled.
MultiViewDataset apply_presence_dropout(const MultiViewDataset& ds, double p_drop, std::uint64_t seed);

inline constexpr std::uint32_t kDatasetVersion = 1;

/// SHAF1 binary format, little-endian:
///   "SHAF1\0" | u32 version | u32 n_nodes | u64 n_samples | u32 num_classes
///   per node: u32 node_id | u32 in_dim | f32[n_samples * in_dim] row-major
///   mask: ceil(n_samples * n_nodes / 8) bytes, bit k = n * n_nodes + i, LSB first
///   labels: u32[n_samples] when num_classes > 0
std::vector<std::uint8_t> encode_dataset(const MultiViewDataset& ds);
MultiViewDataset decode_dataset(const std::vector<std::uint8_t>& bytes);

void write_dataset(const MultiViewDataset& ds, const std::filesystem::path& path);
MultiViewDataset read_dataset(const std::filesystem::path& path);

}  // namespace sheafalign

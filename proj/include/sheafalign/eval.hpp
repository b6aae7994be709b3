#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "json.hpp"
#include "sheafalign/datagen.hpp"
#include "sheafalign/sheaf.hpp"
#include "sheafalign/tensor.hpp"
#include "sheafalign/trainer.hpp"

namespace sheafalign {

/// Fraction of queries whose counterpart (same row in `gallery`) is among
/// the k most cosine-similar gallery rows. Ties rank the lower gallery index
/// first.
double recall_at_k(const Tensor& query, const Tensor& gallery, std::size_t k);

struct PairRecall {
  NodeId query_node = 0;
  NodeId gallery_node = 0;
  std::map<std::size_t, double> recall;  // k -> Recall@k
};

struct RetrievalReport {
  std::vector<std::size_t> ks;
  std::vector<PairRecall> pairs;         // one per directed edge
  std::map<std::size_t, double> mean;    // arithmetic mean over pairs
};

/// Retrieval between every pair of neighbors inside their edge's comparison
/// space, over co-observed samples. `embeddings` holds one N x d_i matrix per node.
RetrievalReport cross_modal_retrieval(const SheafStructure& s, const std::vector<Tensor>& embeddings,
                                      const PresenceMask& mask, const std::vector<std::size_t>& ks);

/// Multinomial logistic regression on frozen features, full-batch gradient
/// descent. Features are centered and scaled by the root-mean-square row
/// distance of a reference pool.
class LinearProbe {
 public:
  static constexpr std::size_t kIterations = 200;
  static constexpr double kLearningRate = 0.1;

  void fit(const Tensor& features, const std::vector<std::uint32_t>& labels, std::uint32_t num_classes,
           const Tensor* standardize_on = nullptr);
  std::vector<std::uint32_t> predict(const Tensor& features) const;
  std::uint32_t predict_one(std::span<const double> feature) const;
  double accuracy(const Tensor& features, const std::vector<std::uint32_t>& labels) const;
  /// Most frequent training label, lowest index on ties.
  std::uint32_t majority_class() const { return majority_; }
  std::uint32_t num_classes() const { return classes_; }

 private:
  Tensor standardize(const Tensor& x) const;

  std::uint32_t classes_ = 0;
  std::uint32_t majority_ = 0;
  Tensor mean_;
  double inv_scale_ = 1.0;
  Tensor weights_;  // dim x classes
  Tensor bias_;     // 1 x classes
};

/// Trains a probe on `shots` seeded samples per class of the training pool
/// and reports accuracy on the test split. Throws ContractError when a class
/// has fewer than `shots` training samples.
double few_shot_probe(const Tensor& train_embeddings, const std::vector<std::uint32_t>& train_labels,
                      const Tensor& test_embeddings, const std::vector<std::uint32_t>& test_labels,
                      std::uint32_t num_classes, std::size_t shots, std::uint64_t seed);

/// Zero-shot transfer: class prototypes are the per-class means of the
/// reference node's labeled projections in the comparison space of edge
/// (reference, target). Target samples, projected into the same space, take
/// the label of the most cosine-similar prototype (lowest class on ties).
double zero_shot_prototype(const SheafStructure& s, NodeId reference, NodeId target,
                           const Tensor& reference_embeddings, const std::vector<std::uint32_t>& reference_labels,
                           const Tensor& target_embeddings, const std::vector<std::uint32_t>& target_labels,
                           std::uint32_t num_classes);

/// Q_ij (P_ji h_j): node i's embedding inferred from neighbor j.
Tensor infer_missing(const SheafStructure& s, NodeId i, NodeId j, const Tensor& h_j);

enum class NeighborSelection { lowest_index, best_reconstruction };

struct InferenceReport {
  double p_drop = 0.0;
  NodeId task_node = 0;
  std::size_t samples = 0;
  std::size_t dropped = 0;
  std::size_t substitutions = 0;
  std::size_t abstentions = 0;  // dropped with no present neighbor
  double accuracy_no_dropout = 0.0;
  double accuracy_with_substitution = 0.0;
  double accuracy_without_substitution = 0.0;  // dropped samples get the majority class
  std::uint64_t bytes = 0;                     // substitutions * d_e * 4
  std::uint64_t counterfactual_bytes = 0;      // substitutions * d_task * 4
};

/// The task node's modality drops per sample with probability p_drop (every
/// node is subject to the same dropout). A dropped sample is recovered from
/// one present neighbor, which sends its edge projection; the task node lifts
/// it with its dual map and runs `probe`.
InferenceReport dropout_inference_experiment(const Model& model, const MultiViewDataset& eval_set, NodeId task_node,
                                             const LinearProbe& probe, double p_drop, std::uint64_t seed,
                                             NeighborSelection selection = NeighborSelection::lowest_index);

/// Node embeddings of a whole dataset.
std::vector<Tensor> embed_dataset(const Model& model, const MultiViewDataset& ds);

nlohmann::ordered_json to_json(const RetrievalReport& r);
nlohmann::ordered_json to_json(const InferenceReport& r);

}  // namespace sheafalign

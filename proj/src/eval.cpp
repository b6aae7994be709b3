#include "sheafalign/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

namespace {

// Index of the largest score, lowest index on ties.
std::uint32_t argmax(std::span<const double> scores) {
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < scores.size(); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

void check_labels(const Tensor& x, const std::vector<std::uint32_t>& labels, std::uint32_t num_classes,
                  const char* what) {
  if (labels.size() != x.rows()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                         x.shape_string());
  }
  for (auto l : labels)
    if (l >= num_classes) throw ContractError(std::string(what) + ": label " + std::to_string(l) + " out of range");
}

double fraction_correct(const std::vector<std::uint32_t>& predicted, const std::vector<std::uint32_t>& labels) {
  if (labels.empty()) throw ContractError("accuracy over an empty evaluation set");
  std::size_t hit = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) hit += predicted[n] == labels[n] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace

double recall_at_k(const Tensor& query, const Tensor& gallery, std::size_t k) {
  require_same_shape(query, gallery, "recall_at_k");
  const std::size_t n = query.rows();
  if (k == 0 || k > n) {
    throw ContractError("recall_at_k: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  const Tensor sim = rowwise_cosine_similarity(query, gallery);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double target = sim(q, q);
    std::size_t rank = 0;
    for (std::size_t g = 0; g < n && rank < k; ++g) {
      const double v = sim(q, g);
      if (v > target || (v == target && g < q)) ++rank;
    }
    hits += rank < k ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

RetrievalReport cross_modal_retrieval(const SheafStructure& s, const std::vector<Tensor>& embeddings,
                                      const PresenceMask& mask, const std::vector<std::size_t>& ks) {
  const CommGraph& g = s.graph();
  if (embeddings.size() != g.node_count() || mask.nodes() != g.node_count()) {
    throw DimensionError("cross_modal_retrieval: embeddings or mask do not match the graph");
  }
  if (ks.empty()) throw ContractError("cross_modal_retrieval: empty K list");
  RetrievalReport report;
  report.ks = ks;
  std::ranges::sort(report.ks);
  for (const auto& [i, j] : g.directed_edges()) {
    const auto rows = mask.co_observed(i, j);
    const Tensor query = project(s, i, j, gather_rows(embeddings[i], rows));
    const Tensor gallery = project(s, j, i, gather_rows(embeddings[j], rows));
    PairRecall pr{i, j, {}};
    for (auto k : report.ks) pr.recall[k] = recall_at_k(query, gallery, k);
    report.pairs.push_back(std::move(pr));
  }
  for (auto k : report.ks) {
    double total = 0.0;
    for (const auto& p : report.pairs) total += p.recall.at(k);
    report.mean[k] = report.pairs.empty() ? 0.0 : total / static_cast<double>(report.pairs.size());
  }
  return report;
}

void LinearProbe::fit(const Tensor& features, const std::vector<std::uint32_t>& labels, std::uint32_t num_classes,
                      const Tensor* standardize_on) {
  if (num_classes == 0) throw ContractError("LinearProbe needs at least one class");
  check_labels(features, labels, num_classes, "LinearProbe::fit");
  if (features.rows() == 0) throw ContractError("LinearProbe::fit on zero samples");
  const Tensor& pool = standardize_on != nullptr ? *standardize_on : features;
  if (pool.cols() != features.cols() || pool.rows() == 0) {
    throw DimensionError("LinearProbe: standardization pool " + pool.shape_string() + " vs features " +
                         features.shape_string());
  }
  classes_ = num_classes;
  const std::size_t d = features.cols();
  const double pool_n = static_cast<double>(pool.rows());
  // Centering plus one global scale; per-column scaling would inflate
  // low-variance nuisance directions to the same weight as the signal.
  mean_ = Tensor(1, d);
  for (std::size_t r = 0; r < pool.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) mean_(0, c) += pool(r, c) / pool_n;
  double var = 0.0;
  for (std::size_t r = 0; r < pool.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) var += (pool(r, c) - mean_(0, c)) * (pool(r, c) - mean_(0, c));
  const double rms = std::sqrt(var / pool_n);
  inv_scale_ = rms > 1e-12 ? 1.0 / rms : 1.0;

  std::vector<std::size_t> counts(num_classes, 0);
  for (auto l : labels) ++counts[l];
  majority_ = static_cast<std::uint32_t>(std::ranges::max_element(counts) - counts.begin());

  const Tensor x = standardize(features);
  const std::size_t n = x.rows();
  weights_ = Tensor(d, num_classes);
  bias_ = Tensor(1, num_classes);
  Tensor residual(n, num_classes);
  for (std::size_t it = 0; it < kIterations; ++it) {
    Tensor logits = matmul(x, weights_);
    for (std::size_t r = 0; r < n; ++r) {
      auto row = logits.row_view(r);
      double mx = row[0];
      for (std::size_t c = 0; c < num_classes; ++c) mx = std::max(mx, row[c] + bias_(0, c));
      double z = 0.0;
      for (std::size_t c = 0; c < num_classes; ++c) z += std::exp(row[c] + bias_(0, c) - mx);
      for (std::size_t c = 0; c < num_classes; ++c) {
        const double p = std::exp(row[c] + bias_(0, c) - mx) / z;
        residual(r, c) = (p - (labels[r] == c ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
    weights_ += (-kLearningRate) * matmul(transpose(x), residual);
    for (std::size_t c = 0; c < num_classes; ++c) {
      double g = 0.0;
      for (std::size_t r = 0; r < n; ++r) g += residual(r, c);
      bias_(0, c) -= kLearningRate * g;
    }
  }
}

Tensor LinearProbe::standardize(const Tensor& x) const {
  if (x.cols() != mean_.cols()) {
    throw DimensionError("LinearProbe: features " + x.shape_string() + " but probe fitted on " +
                         std::to_string(mean_.cols()) + " columns");
  }
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = (out(r, c) - mean_(0, c)) * inv_scale_;
  return out;
}

std::uint32_t LinearProbe::predict_one(std::span<const double> feature) const {
  if (classes_ == 0) throw ContractError("LinearProbe used before fit");
  return predict(Tensor::row(feature)).front();
}

std::vector<std::uint32_t> LinearProbe::predict(const Tensor& features) const {
  if (classes_ == 0) throw ContractError("LinearProbe used before fit");
  const Tensor logits = matmul(standardize(features), weights_);
  std::vector<std::uint32_t> out(features.rows());
  std::vector<double> scores(classes_);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    for (std::size_t c = 0; c < classes_; ++c) scores[c] = logits(r, c) + bias_(0, c);
    out[r] = argmax(scores);
  }
  return out;
}

double LinearProbe::accuracy(const Tensor& features, const std::vector<std::uint32_t>& labels) const {
  check_labels(features, labels, classes_, "LinearProbe::accuracy");
  return fraction_correct(predict(features), labels);
}

double few_shot_probe(const Tensor& train_embeddings, const std::vector<std::uint32_t>& train_labels,
                      const Tensor& test_embeddings, const std::vector<std::uint32_t>& test_labels,
                      std::uint32_t num_classes, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ContractError("few_shot_probe: shots must be >= 1");
  check_labels(train_embeddings, train_labels, num_classes, "few_shot_probe");
  std::vector<std::size_t> chosen;
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t r = 0; r < train_labels.size(); ++r)
      if (train_labels[r] == c) members.push_back(r);
    if (members.size() < shots) {
      throw ContractError("few_shot_probe: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                          " samples, fewer than " + std::to_string(shots) + " shots");
    }
    Rng rng = make_rng(seed, "probe.shots", c);
    std::shuffle(members.begin(), members.end(), rng);
    chosen.insert(chosen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(shots));
  }
  std::ranges::sort(chosen);
  std::vector<std::uint32_t> y;
  for (auto r : chosen) y.push_back(train_labels[r]);
  LinearProbe probe;
  probe.fit(gather_rows(train_embeddings, chosen), y, num_classes, &train_embeddings);
  return probe.accuracy(test_embeddings, test_labels);
}

double zero_shot_prototype(const SheafStructure& s, NodeId reference, NodeId target,
                           const Tensor& reference_embeddings, const std::vector<std::uint32_t>& reference_labels,
                           const Tensor& target_embeddings, const std::vector<std::uint32_t>& target_labels,
                           std::uint32_t num_classes) {
  if (!s.graph().has_edge(reference, target)) {
    throw StructureError("zero_shot_prototype: no edge between nodes " + std::to_string(reference) + " and " +
                         std::to_string(target));
  }
  check_labels(reference_embeddings, reference_labels, num_classes, "zero_shot_prototype (reference)");
  check_labels(target_embeddings, target_labels, num_classes, "zero_shot_prototype (target)");
  const Tensor ref_proj = project(s, reference, target, reference_embeddings);
  const Tensor tgt_proj = project(s, target, reference, target_embeddings);

  Tensor protos(num_classes, ref_proj.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t r = 0; r < ref_proj.rows(); ++r) {
    const auto c = reference_labels[r];
    ++counts[c];
    for (std::size_t k = 0; k < ref_proj.cols(); ++k) protos(c, k) += ref_proj(r, k);
  }
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw ContractError("zero_shot_prototype: class " + std::to_string(c) + " has no reference samples");
    for (std::size_t k = 0; k < protos.cols(); ++k) protos(c, k) /= static_cast<double>(counts[c]);
  }
  const Tensor sim = matmul(normalize_rows(tgt_proj), transpose(normalize_rows(protos)));
  std::vector<std::uint32_t> predicted(tgt_proj.rows());
  for (std::size_t r = 0; r < tgt_proj.rows(); ++r) predicted[r] = argmax(sim.row_view(r));
  return fraction_correct(predicted, target_labels);
}

Tensor infer_missing(const SheafStructure& s, NodeId i, NodeId j, const Tensor& h_j) {
  if (!s.graph().has_edge(i, j)) {
    throw StructureError("infer_missing: (" + std::to_string(i) + ", " + std::to_string(j) + ") is not an edge");
  }
  return lift(s, i, j, project(s, j, i, h_j));
}

std::vector<Tensor> embed_dataset(const Model& model, const MultiViewDataset& ds) {
  if (ds.node_count() != model.encoders.size()) {
    throw DimensionError("dataset has " + std::to_string(ds.node_count()) + " views, model has " +
                         std::to_string(model.encoders.size()) + " nodes");
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < model.encoders.size(); ++i) out.push_back(encode_batch(model.encoders[i], ds.views[i]));
  return out;
}

InferenceReport dropout_inference_experiment(const Model& model, const MultiViewDataset& eval_set, NodeId task_node,
                                             const LinearProbe& probe, double p_drop, std::uint64_t seed,
                                             NeighborSelection selection) {
  const SheafStructure& s = model.sheaf;
  const CommGraph& g = s.graph();
  if (task_node >= g.node_count()) throw StructureError("task node " + std::to_string(task_node) + " out of range");
  if (!eval_set.labeled()) throw ContractError("dropout_inference_experiment needs a labeled eval set");
  const auto h = embed_dataset(model, eval_set);
  const MultiViewDataset dropped = apply_presence_dropout(eval_set, p_drop, seed);
  const auto& nbrs = g.neighbors(task_node);

  // Neighbor preference order. Best-reconstruction ranks by mean squared
  // reconstruction error of the task embedding over originally co-observed samples.
  std::vector<NodeId> order(nbrs.begin(), nbrs.end());
  if (selection == NeighborSelection::best_reconstruction) {
    std::vector<double> err(g.node_count(), 0.0);
    for (NodeId j : order) {
      const auto rows = eval_set.mask.co_observed(task_node, j);
      if (rows.empty()) {
        err[j] = INFINITY;
        continue;
      }
      const Tensor rec = infer_missing(s, task_node, j, gather_rows(h[j], rows));
      err[j] = squared_norm(rec - gather_rows(h[task_node], rows)) / static_cast<double>(rows.size());
    }
    std::ranges::stable_sort(order, [&](NodeId a, NodeId b) { return err[a] < err[b]; });
  }

  InferenceReport rep;
  rep.p_drop = p_drop;
  rep.task_node = task_node;
  const std::size_t d_task = s.stalk_dim(task_node);
  std::vector<std::uint32_t> labels, pred_clean, pred_sub, pred_abstain;
  for (std::size_t n = 0; n < eval_set.sample_count(); ++n) {
    if (!eval_set.mask(n, task_node)) continue;  // the task modality never existed for this sample
    ++rep.samples;
    labels.push_back(eval_set.labels[n]);
    const std::uint32_t clean = probe.predict_one(h[task_node].row_view(n));
    pred_clean.push_back(clean);
    if (dropped.mask(n, task_node)) {
      pred_sub.push_back(clean);
      pred_abstain.push_back(clean);
      continue;
    }
    ++rep.dropped;
    pred_abstain.push_back(probe.majority_class());
    const auto source = std::ranges::find_if(order, [&](NodeId j) { return dropped.mask(n, j); });
    if (source == order.end()) {
      ++rep.abstentions;
      pred_sub.push_back(probe.majority_class());
      continue;
    }
    const NodeId j = *source;
    const Tensor h_tilde = infer_missing(s, task_node, j, Tensor::row(h[j].row_view(n)));
    pred_sub.push_back(probe.predict_one(h_tilde.row_view(0)));
    ++rep.substitutions;
    rep.bytes += static_cast<std::uint64_t>(s.edge_dim(task_node, j)) * 4;
    rep.counterfactual_bytes += static_cast<std::uint64_t>(d_task) * 4;
  }
  rep.accuracy_no_dropout = fraction_correct(pred_clean, labels);
  rep.accuracy_with_substitution = fraction_correct(pred_sub, labels);
  rep.accuracy_without_substitution = fraction_correct(pred_abstain, labels);
  return rep;
}

nlohmann::ordered_json to_json(const RetrievalReport& r) {
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& p : r.pairs) {
    nlohmann::ordered_json entry;
    entry["query"] = p.query_node;
    entry["gallery"] = p.gallery_node;
    for (const auto& [k, v] : p.recall) entry["r" + std::to_string(k)] = v;
    pairs.push_back(std::move(entry));
  }
  nlohmann::ordered_json mean;
  for (const auto& [k, v] : r.mean) mean["r" + std::to_string(k)] = v;
  return {{"pairs", std::move(pairs)}, {"mean", std::move(mean)}};
}

nlohmann::ordered_json to_json(const InferenceReport& r) {
  nlohmann::ordered_json j;
  j["p_drop"] = r.p_drop;
  j["task_node"] = r.task_node;
  j["samples"] = r.samples;
  j["dropped"] = r.dropped;
  j["substitutions"] = r.substitutions;
  j["abstentions"] = r.abstentions;
  j["accuracy_no_dropout"] = r.accuracy_no_dropout;
  j["accuracy_with_substitution"] = r.accuracy_with_substitution;
  j["accuracy_without_substitution"] = r.accuracy_without_substitution;
  j["bytes"] = r.bytes;
  j["counterfactual_bytes"] = r.counterfactual_bytes;
  return j;
}

}  // namespace sheafalign

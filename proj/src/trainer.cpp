#include "sheafalign/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <memory>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "sheafalign/binary_io.hpp"
#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be > 0");
  weights.validate();
}

std::uint64_t TrainConfig::digest() const {
  auto mix = [](std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ v); };
  auto bits = [](double d) { return std::bit_cast<std::uint64_t>(d); };
  std::uint64_t h = 0x5348414643464731ULL;
  h = mix(h, batch_size);
  h = mix(h, bits(learning_rate));
  h = mix(h, bits(weights.lambda));
  h = mix(h, bits(weights.beta));
  h = mix(h, bits(weights.gamma));
  h = mix(h, bits(weights.tau));
  h = mix(h, weights.symmetric_contrastive ? 1 : 0);
  h = mix(h, seed);
  h = mix(h, shuffle ? 1 : 0);
  h = mix(h, optimizer == OptimizerKind::adam ? 1 : 2);
  return h;
}

std::uint64_t Model::structure_digest() const {
  std::uint64_t h = graph().digest();
  for (auto d : sheaf.stalk_dims()) h = splitmix64(h ^ d);
  for (auto d : sheaf.edge_dims()) h = splitmix64(h ^ (d << 1));
  for (const auto& enc : encoders) {
    h = splitmix64(h ^ static_cast<std::uint64_t>(enc.nonlinearity));
    for (auto w : enc.widths) h = splitmix64(h ^ (w << 2));
  }
  return h;
}

Model init_model(const CommGraph& g, const ModelSpec& spec, std::uint64_t seed,
                 std::vector<std::string>* warnings) {
  const std::size_t n = g.node_count();
  if (spec.input_dims.size() != n || spec.stalk_dims.size() != n) {
    throw StructureError("model spec needs one input dim and one stalk dim per node");
  }
  Model m;
  for (NodeId i = 0; i < n; ++i) {
    std::vector<std::size_t> widths;
    if (spec.hidden_widths) {
      widths.push_back(spec.input_dims[i]);
      widths.insert(widths.end(), spec.hidden_widths->begin(), spec.hidden_widths->end());
      widths.push_back(spec.stalk_dims[i]);
    } else {
      widths = default_encoder_widths(spec.input_dims[i], spec.stalk_dims[i]);
    }
    m.encoders.push_back(init_encoder(widths, spec.nonlinearity, derive_seed(seed, "model.encoder", i)));
  }
  m.sheaf = init_sheaf(g, spec.stalk_dims, spec.edge_dims, derive_seed(seed, "model.sheaf"), warnings);
  return m;
}

std::vector<Tensor*> owned_parameters(Model& model, NodeId i) {
  std::vector<Tensor*> out;
  Encoder& enc = model.encoders.at(i);
  for (std::size_t k = 0; k < enc.layer_count(); ++k) {
    out.push_back(&enc.weights[k]);
    out.push_back(&enc.biases[k]);
  }
  for (NodeId j : model.graph().neighbors(i)) {
    out.push_back(&model.sheaf.restriction(i, j));
    out.push_back(&model.sheaf.dual(i, j));
  }
  return out;
}

std::vector<const Tensor*> owned_parameters(const Model& model, NodeId i) {
  auto ptrs = owned_parameters(const_cast<Model&>(model), i);
  return {ptrs.begin(), ptrs.end()};
}

bool operator==(const TrainState& a, const TrainState& b) {
  return a.model.encoders == b.model.encoders && a.model.structure_digest() == b.model.structure_digest() &&
         a.model.sheaf.restrictions() == b.model.sheaf.restrictions() &&
         a.model.sheaf.duals() == b.model.sheaf.duals() && a.optimizer == b.optimizer && a.versions == b.versions &&
         a.epochs_completed == b.epochs_completed && a.rounds_completed == b.rounds_completed &&
         a.bytes_cumulative == b.bytes_cumulative;
}

TrainState init_train_state(Model model) {
  TrainState st;
  st.model = std::move(model);
  const std::size_t n = st.model.graph().node_count();
  if (st.model.encoders.size() != n) throw StructureError("model needs one encoder per node");
  for (NodeId i = 0; i < n; ++i) {
    if (st.model.encoders[i].output_dim() != st.model.sheaf.stalk_dim(i)) {
      throw DimensionError("encoder " + std::to_string(i) + " outputs " +
                           std::to_string(st.model.encoders[i].output_dim()) + " but stalk dim is " +
                           std::to_string(st.model.sheaf.stalk_dim(i)));
    }
    std::vector<AdamState> states;
    for (const Tensor* p : owned_parameters(std::as_const(st.model), i)) states.push_back(make_adam_state(*p));
    st.versions.emplace_back(states.size(), 0);
    st.optimizer.push_back(std::move(states));
  }
  return st;
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, count));
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t k = next++; k < count; k = next++) {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

// Per-node scratch for one round. Slot k refers to neighbors(i)[k].
struct NodeRound {
  std::unique_ptr<Tape> tape;
  EncoderVars encoder;
  Tensor embeddings;
  std::vector<std::vector<std::size_t>> rows;
  std::vector<Var> restriction;
  std::vector<Var> dual;
  std::vector<Var> h_rows;
  std::vector<Var> projection;
  std::vector<Tensor> received;          // neighbor projections
  std::vector<Tensor> adjoint;           // gamma-scaled adjoints from neighbors
  std::vector<double> laplacian;         // per slot
  std::vector<double> contrastive;       // per slot
  std::vector<double> recon_local;       // reconstruct own embeddings from slot neighbor
  std::vector<Tensor> grads;
};

std::size_t slot_of(const CommGraph& g, NodeId i, NodeId j) {
  const auto& nb = g.neighbors(i);
  return static_cast<std::size_t>(std::lower_bound(nb.begin(), nb.end(), j) - nb.begin());
}

void apply_update(TrainState& st, NodeId i, const std::vector<Tensor>& grads, const TrainConfig& cfg) {
  auto params = owned_parameters(st.model, i);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (cfg.optimizer == OptimizerKind::adam) {
      adam_step(st.optimizer[i][k], *params[k], grads[k], cfg.learning_rate);
    } else {
      sgd_step(*params[k], grads[k], cfg.learning_rate);
    }
    ++st.versions[i][k];
  }
}

}  // namespace

RoundOutcome decentralized_round(TrainState& st, const std::vector<Tensor>& inputs, const PresenceMask& mask,
                                 const TrainConfig& cfg, Transport& transport,
                                 const std::vector<NodeId>& update_nodes) {
  cfg.weights.validate();
  const CommGraph& g = st.model.graph();
  const std::size_t n = g.node_count();
  const std::size_t B = mask.samples();
  if (inputs.size() != n || mask.nodes() != n) {
    throw DimensionError("round needs one input matrix per node and a matching mask");
  }
  for (NodeId i = 0; i < n; ++i) {
    if (inputs[i].rows() != B) {
      throw DimensionError("node " + std::to_string(i) + " input has " + std::to_string(inputs[i].rows()) +
                           " rows, mask has " + std::to_string(B));
    }
  }
  bool any_pair = false;
  for (const auto& e : g.edges()) any_pair = any_pair || !mask.co_observed(e.first, e.second).empty();
  if (!any_pair) return {{}, true};

  const std::uint64_t round = st.rounds_completed;
  const LossWeights& w = cfg.weights;
  std::vector<NodeRound> work(n);

  // Local step: encode and project onto every incident comparison space.
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    NodeRound& nr = work[i];
    nr.tape = std::make_unique<Tape>();
    Tape& tape = *nr.tape;
    nr.encoder = bind_encoder(tape, st.model.encoders[i], true);
    Var h = encode_batch(nr.encoder, tape.constant(inputs[i]));
    nr.embeddings = h.value();
    const auto& nbrs = g.neighbors(i);
    const std::size_t deg = nbrs.size();
    nr.rows.resize(deg);
    nr.h_rows.resize(deg);
    nr.projection.resize(deg);
    nr.received.resize(deg);
    nr.adjoint.resize(deg);
    nr.laplacian.assign(deg, 0.0);
    nr.contrastive.assign(deg, 0.0);
    nr.recon_local.assign(deg, 0.0);
    for (std::size_t k = 0; k < deg; ++k) {
      const NodeId j = nbrs[k];
      nr.restriction.push_back(tape.leaf(st.model.sheaf.restriction(i, j)));
      nr.dual.push_back(tape.leaf(st.model.sheaf.dual(i, j)));
      nr.rows[k] = mask.co_observed(i, j);
      if (nr.rows[k].empty()) continue;
      nr.h_rows[k] = gather_rows(h, nr.rows[k]);
      nr.projection[k] = matmul(nr.h_rows[k], transpose(nr.restriction[k]));
      transport.post({i, j, round, MessageKind::projection, nr.projection[k].value(), 0.0});
    }
  });
  transport.flush();

  // Each node answers every received projection with the adjoint of its own
  // reconstruction term, gamma/B * ||p Q^T - h||^2, with respect to p.
  parallel_for(n, cfg.threads, [&](std::size_t j) {
    NodeRound& nr = work[j];
    for (auto& msg : transport.take(j)) {
      const std::size_t k = slot_of(g, j, msg.from);
      nr.received[k] = std::move(msg.payload);
      const Tensor& Q = st.model.sheaf.dual(j, msg.from);
      const Tensor resid = matmul(nr.received[k], transpose(Q)) - gather_rows(nr.embeddings, nr.rows[k]);
      const double value = squared_norm(resid) / static_cast<double>(B);
      Tensor adj = (2.0 * w.gamma / static_cast<double>(B)) * matmul(resid, Q);
      transport.post({j, msg.from, round, MessageKind::reconstruction_adjoint, std::move(adj), value});
    }
  });
  transport.flush();

  // Local loss L_i over incident edges, gradient, own update.
  std::vector<NodeId> updating = update_nodes;
  if (updating.empty()) {
    updating.resize(n);
    std::iota(updating.begin(), updating.end(), NodeId{0});
  }
  std::vector<std::uint8_t> do_update(n, 0);
  for (NodeId i : updating) do_update.at(i) = 1;

  parallel_for(n, cfg.threads, [&](std::size_t i) {
    NodeRound& nr = work[i];
    Tape& tape = *nr.tape;
    const auto& nbrs = g.neighbors(i);
    for (auto& msg : transport.take(i)) {
      const std::size_t k = slot_of(g, i, msg.from);
      nr.adjoint[k] = std::move(msg.payload);
    }
    Var lap = tape.constant(Tensor(1, 1));
    Var con = lap;
    Var rec = lap;
    Var sur = lap;
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      if (nr.rows[k].empty()) continue;
      const NodeId j = nbrs[k];
      Var mine = nr.projection[k];
      Var theirs = tape.constant(nr.received[k]);
      Var l = laplacian_edge_term(mine, theirs);
      Var c = i < j ? contrastive_present(mine, theirs, B, w.tau) : contrastive_present(theirs, mine, B, w.tau);
      if (w.symmetric_contrastive) {
        Var other = i < j ? contrastive_present(theirs, mine, B, w.tau) : contrastive_present(mine, theirs, B, w.tau);
        c = 0.5 * (c + other);
      }
      Var r = reconstruction_from_projection(nr.dual[k], theirs, nr.h_rows[k], B);
      nr.laplacian[k] = l.value().item();
      nr.contrastive[k] = c.value().item();
      nr.recon_local[k] = r.value().item();
      lap = lap + l;
      con = con + c;
      rec = rec + r;
      sur = sur + sum(hadamard(mine, tape.constant(nr.adjoint[k])));
    }
    Var loss = w.lambda * lap + w.beta * con + w.gamma * rec + sur;
    tape.backward(loss);
    for (std::size_t k = 0; k < nr.encoder.weights.size(); ++k) {
      nr.grads.push_back(tape.grad(nr.encoder.weights[k]));
      nr.grads.push_back(tape.grad(nr.encoder.biases[k]));
    }
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      nr.grads.push_back(tape.grad(nr.restriction[k]));
      nr.grads.push_back(tape.grad(nr.dual[k]));
    }
    if (do_update[i]) apply_update(st, i, nr.grads, cfg);
  });

  // Edge terms are reported once, by the lower endpoint.
  RoundOutcome out;
  for (NodeId i = 0; i < n; ++i) {
    const auto& nbrs = g.neighbors(i);
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      if (i < nbrs[k]) {
        out.loss.laplacian += work[i].laplacian[k];
        out.loss.contrastive += work[i].contrastive[k];
      }
      out.loss.reconstruction += work[i].recon_local[k];
    }
  }
  out.loss.total = w.lambda * out.loss.laplacian + w.beta * out.loss.contrastive + w.gamma * out.loss.reconstruction;
  ++st.rounds_completed;
  return out;
}

std::string metrics_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["total"] = m.loss.total;
  j["lap"] = m.loss.laplacian;
  j["contrast"] = m.loss.contrastive;
  j["recon"] = m.loss.reconstruction;
  j["bytes_cum"] = m.bytes_cumulative;
  return j.dump();
}

TrainResult train(const MultiViewDataset& ds, TrainState state, const TrainConfig& cfg) {
  cfg.validate();
  const CommGraph& g = state.model.graph();
  if (ds.node_count() != g.node_count()) {
    throw DimensionError("dataset has " + std::to_string(ds.node_count()) + " nodes, graph has " +
                         std::to_string(g.node_count()));
  }
  for (NodeId i = 0; i < g.node_count(); ++i) {
    if (ds.views[i].cols() != state.model.encoders[i].input_dim()) {
      throw DimensionError("node " + std::to_string(i) + " data width " + std::to_string(ds.views[i].cols()) +
                           " does not match encoder input " + std::to_string(state.model.encoders[i].input_dim()));
    }
  }

  TrainResult result;
  Transport transport(g.node_count(), result.ledger, cfg.count_gradient_messages);
  const std::size_t samples = ds.sample_count();
  const std::size_t batches = (samples + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t epoch = state.epochs_completed; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) {
      Rng rng = make_rng(cfg.seed, "train.shuffle", epoch);
      std::shuffle(order.begin(), order.end(), rng);
    }
    EpochMetrics em;
    em.epoch = epoch + 1;
    const std::uint64_t bytes_before = result.ledger.total_bytes();
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(samples, lo + cfg.batch_size);
      std::vector<std::size_t> rows(order.begin() + lo, order.begin() + hi);
      std::vector<Tensor> inputs;
      for (const auto& v : ds.views) inputs.push_back(gather_rows(v, rows));
      const PresenceMask mask = ds.mask.select(rows);
      RoundOutcome r = decentralized_round(state, inputs, mask, cfg, transport);
      if (r.skipped) {
        ++em.skipped;
        result.warnings.push_back("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) +
                                  ": no co-observed pair, batch skipped");
        continue;
      }
      ++em.batches;
      em.loss.total += r.loss.total;
      em.loss.laplacian += r.loss.laplacian;
      em.loss.contrastive += r.loss.contrastive;
      em.loss.reconstruction += r.loss.reconstruction;
    }
    if (em.batches > 0) {
      const double k = static_cast<double>(em.batches);
      em.loss.total /= k;
      em.loss.laplacian /= k;
      em.loss.contrastive /= k;
      em.loss.reconstruction /= k;
    }
    state.bytes_cumulative += result.ledger.total_bytes() - bytes_before;
    em.bytes_cumulative = state.bytes_cumulative;
    state.epochs_completed = epoch + 1;
    result.metrics.push_back(em);
  }
  if (!cfg.checkpoint_path.empty()) save_checkpoint(state, cfg.digest(), cfg.checkpoint_path);
  result.state = std::move(state);
  return result;
}

namespace {

constexpr std::string_view kCheckpointMagic = "SHAFCKPT";

void put_tensor(ByteWriter& w, const Tensor& t) {
  w.u64(t.rows());
  w.u64(t.cols());
  for (double v : t.data()) w.f64(v);
}

Tensor get_tensor(ByteReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows != 0 && cols > (r.remaining() / 8) / rows) r.fail("tensor larger than remaining payload");
  Tensor t(rows, cols);
  for (double& v : t.data()) v = r.f64();
  return t;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& st, std::uint64_t config_digest) {
  const Model& m = st.model;
  const CommGraph& g = m.graph();
  ByteWriter p;
  p.u64(config_digest);
  p.u32(static_cast<std::uint32_t>(g.node_count()));
  for (auto mod : g.modalities()) p.u32(mod);
  p.u32(static_cast<std::uint32_t>(g.edge_count()));
  for (const auto& e : g.edges()) {
    p.u32(static_cast<std::uint32_t>(e.first));
    p.u32(static_cast<std::uint32_t>(e.second));
  }
  for (auto d : m.sheaf.stalk_dims()) p.u64(d);
  for (auto d : m.sheaf.edge_dims()) p.u64(d);
  for (const auto& enc : m.encoders) {
    p.str(to_string(enc.nonlinearity));
    p.u32(static_cast<std::uint32_t>(enc.widths.size()));
    for (auto wd : enc.widths) p.u64(wd);
    for (std::size_t k = 0; k < enc.layer_count(); ++k) {
      put_tensor(p, enc.weights[k]);
      put_tensor(p, enc.biases[k]);
    }
  }
  for (const auto& t : m.sheaf.restrictions()) put_tensor(p, t);
  for (const auto& t : m.sheaf.duals()) put_tensor(p, t);
  for (std::size_t i = 0; i < st.optimizer.size(); ++i) {
    p.u32(static_cast<std::uint32_t>(st.optimizer[i].size()));
    for (std::size_t k = 0; k < st.optimizer[i].size(); ++k) {
      p.u64(st.optimizer[i][k].step);
      p.u64(st.versions[i][k]);
      put_tensor(p, st.optimizer[i][k].m);
      put_tensor(p, st.optimizer[i][k].v);
    }
  }
  p.u64(st.epochs_completed);
  p.u64(st.rounds_completed);
  p.u64(st.bytes_cumulative);

  const auto payload = p.take();
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(m.structure_digest());
  w.u64(payload.size());
  w.buffer().insert(w.buffer().end(), payload.begin(), payload.end());
  w.u64(checksum64(payload.data(), payload.size()));
  return w.take();
}

TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes, const CommGraph* expected_graph,
                             std::uint64_t* config_digest) {
  ByteReader r(bytes);
  r.section("magic");
  if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    r.fail_at(0, "bad magic");
  }
  r.section("header");
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail_at(version_at, "unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t structure = r.u64();
  const std::uint64_t length = r.u64();
  const std::size_t payload_at = static_cast<std::size_t>(r.offset());
  if (r.remaining() < length + 8) r.fail("truncated payload");
  r.bytes(length);
  const std::uint64_t stored_sum = r.u64();
  if (checksum64(bytes.data() + payload_at, length) != stored_sum) {
    throw ChecksumError("checkpoint checksum mismatch (file corrupted)");
  }
  if (r.remaining() != 0) r.fail("trailing bytes after checksum");

  std::vector<std::uint8_t> payload(bytes.begin() + payload_at, bytes.begin() + payload_at + length);
  ByteReader p(payload);
  p.section("payload");
  const std::uint64_t cfg_digest = p.u64();
  if (config_digest != nullptr) *config_digest = cfg_digest;
  const std::uint32_t n = p.u32();
  std::vector<std::uint32_t> modalities(n);
  for (auto& mod : modalities) mod = p.u32();
  const std::uint32_t edge_count = p.u32();
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::uint32_t e = 0; e < edge_count; ++e) {
    const NodeId a = p.u32();
    const NodeId b = p.u32();
    edges.emplace_back(a, b);
  }
  CommGraph g = build_graph(n, edges, modalities);
  if (expected_graph != nullptr && expected_graph->digest() != g.digest()) {
    throw DigestError("checkpoint was trained on a different graph");
  }
  std::vector<std::size_t> stalk(n), edim(edge_count);
  for (auto& d : stalk) d = p.u64();
  for (auto& d : edim) d = p.u64();

  Model m;
  for (std::uint32_t i = 0; i < n; ++i) {
    Encoder enc;
    enc.nonlinearity = parse_nonlinearity(p.str());
    const std::uint32_t widths = p.u32();
    for (std::uint32_t k = 0; k < widths; ++k) enc.widths.push_back(p.u64());
    for (std::uint32_t k = 0; k + 1 < widths; ++k) {
      enc.weights.push_back(get_tensor(p));
      enc.biases.push_back(get_tensor(p));
    }
    m.encoders.push_back(std::move(enc));
  }
  m.sheaf = SheafStructure(std::move(g), std::move(stalk), std::move(edim));
  for (auto& t : m.sheaf.restrictions()) t = get_tensor(p);
  for (auto& t : m.sheaf.duals()) t = get_tensor(p);
  if (m.structure_digest() != structure) throw DigestError("checkpoint structure digest mismatch");

  TrainState st = init_train_state(std::move(m));
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t count = p.u32();
    if (count != st.optimizer[i].size()) p.fail("optimizer state count mismatch for node " + std::to_string(i));
    for (std::uint32_t k = 0; k < count; ++k) {
      st.optimizer[i][k].step = p.u64();
      st.versions[i][k] = p.u64();
      st.optimizer[i][k].m = get_tensor(p);
      st.optimizer[i][k].v = get_tensor(p);
    }
  }
  st.epochs_completed = p.u64();
  st.rounds_completed = p.u64();
  st.bytes_cumulative = p.u64();
  if (p.remaining() != 0) p.fail("trailing payload bytes");
  return st;
}

void save_checkpoint(const TrainState& state, std::uint64_t config_digest, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(state, config_digest));
}

TrainState load_checkpoint(const std::filesystem::path& path, const CommGraph* expected_graph,
                           std::uint64_t* config_digest) {
  return decode_checkpoint(read_file_bytes(path), expected_graph, config_digest);
}

}  // namespace sheafalign

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sheafalign/binary_io.hpp"
#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"
#include "sheafalign/trainer.hpp"

using namespace sheafalign;
namespace fs = std::filesystem;

namespace {

MultiViewDataset small_data(std::uint64_t seed, std::size_t per_class = 40) {
  RedundancyControl c;
  c.obs_dim = 10;
  return generate_multiview(3, per_class, c, 3, seed);
}

Model small_model(const MultiViewDataset& ds, std::uint64_t seed, std::size_t nodes = 3) {
  ModelSpec spec;
  spec.input_dims.assign(nodes, ds.views[0].cols());
  spec.stalk_dims.assign(nodes, 6);
  spec.nonlinearity = Nonlinearity::tanh;
  return init_model(fully_connected_graph(nodes), spec, seed);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-2;
  cfg.seed = 3;
  return cfg;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sheafalign_test_" + name); }

}  // namespace

TEST_CASE("projection exchange byte accounting") {
  std::mt19937_64 rng(1);
  const SheafStructure s = init_sheaf(build_graph(2, {{0, 1}}), {40, 40}, std::vector<std::size_t>{32}, 1);
  TransportLedger ledger;
  std::vector<Tensor> h{oracle::random_tensor(rng, 4, 40), oracle::random_tensor(rng, 4, 40)};
  const auto ex = exchange_projections(s, h, PresenceMask(4, 2, true), 0, ledger);
  REQUIRE(ledger.message_count() == 2);
  for (const auto& e : ledger.entries()) CHECK(e.bytes == 512);
  CHECK(max_abs_diff(ex[0].first, project(s, 0, 1, h[0])) == 0.0);

  PresenceMask half(4, 2, true);
  half.set(0, 1, false);
  half.set(3, 0, false);
  TransportLedger l2;
  const auto ex2 = exchange_projections(s, h, half, 0, l2);
  CHECK(ex2[0].rows == std::vector<std::size_t>{1, 2});
  for (const auto& e : l2.entries()) CHECK(e.bytes == 2 * 32 * 4);

  const SheafStructure tri = init_sheaf(fully_connected_graph(3), {40, 40, 40}, std::nullopt, 2);
  TransportLedger l3;
  (void)exchange_projections(tri, {h[0], h[1], h[0]}, PresenceMask(4, 3, true), 0, l3);
  CHECK(l3.message_count() == 6);
}

TEST_CASE("adam step") {
  Tensor p{{1.0, -2.0, 0.5}};
  AdamState st = make_adam_state(p);
  adam_step(st, p, Tensor{{3.0, -0.5, 100.0}}, 0.01);
  CHECK(p(0, 0) == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p(0, 1) == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(p(0, 2) == doctest::Approx(0.49).epsilon(1e-6));
  CHECK(st.step == 1);

  Tensor z{{4.0, 5.0}};
  AdamState sz = make_adam_state(z);
  for (int k = 0; k < 5; ++k) adam_step(sz, z, Tensor(1, 2), 0.1);
  CHECK(z == Tensor{{4.0, 5.0}});

  Tensor x{{0.7}};
  AdamState sx = make_adam_state(x);
  const auto expected = oracle::adam_trace(0.7, {1.0, 1.0, 1.0}, 0.1);
  for (int k = 0; k < 3; ++k) {
    adam_step(sx, x, Tensor{{1.0}}, 0.1);
    CHECK(std::abs(x(0, 0) - expected[k]) <= 1e-12);
  }
  CHECK_THROWS_AS(adam_step(sx, x, Tensor(1, 2), 0.1), DimensionError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("zero loss weights leave parameters unchanged") {
  const MultiViewDataset ds = small_data(1);
  const Model m = small_model(ds, 2);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.weights = {0.0, 0.0, 0.0, 0.1, false};
  const TrainResult r = train(ds, init_train_state(m), cfg);
  CHECK(r.state.model.encoders == m.encoders);
  CHECK(r.state.model.sheaf.restrictions() == m.sheaf.restrictions());
  CHECK(r.state.model.sheaf.duals() == m.sheaf.duals());
}

TEST_CASE("training is deterministic and thread-count independent") {
  const MultiViewDataset ds = apply_presence_dropout(small_data(4), 0.2, 5);
  const Model m = small_model(ds, 6);
  TrainConfig cfg = small_config();
  const TrainResult a = train(ds, init_train_state(m), cfg);
  const TrainResult b = train(ds, init_train_state(m), cfg);
  cfg.threads = 3;
  const TrainResult c = train(ds, init_train_state(m), cfg);
  CHECK(a.state == b.state);
  CHECK(a.state == c.state);
  for (std::size_t e = 0; e < a.metrics.size(); ++e) {
    CHECK(metrics_json_line(a.metrics[e]) == metrics_json_line(b.metrics[e]));
    CHECK(metrics_json_line(a.metrics[e]) == metrics_json_line(c.metrics[e]));
  }
  CHECK(encode_checkpoint(a.state, cfg.digest()) == encode_checkpoint(c.state, cfg.digest()));
}

TEST_CASE("loss decreases over the first epochs") {
  RedundancyControl ctrl;
  const auto [train_set, test_set] = split_per_class(generate_multiview(3, 300, ctrl, 3, derive_seed(1, "t")), 200);
  ModelSpec spec;
  spec.input_dims.assign(3, train_set.views[0].cols());
  spec.stalk_dims.assign(3, 32);
  spec.edge_dims = std::vector<std::size_t>(3, 16);
  const Model m = init_model(fully_connected_graph(3), spec, 11);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 64;
  cfg.seed = 1;
  const TrainResult r = train(train_set, init_train_state(m), cfg);
  REQUIRE(r.metrics.size() == 5);
  int violations = 0;
  for (std::size_t e = 1; e < 5; ++e) violations += r.metrics[e].loss.total < r.metrics[e - 1].loss.total ? 0 : 1;
  CHECK(violations <= 1);
}

TEST_CASE("ledger bytes match the per-edge formula exactly") {
  const MultiViewDataset ds = apply_presence_dropout(small_data(7, 30), 0.3, 8);
  ModelSpec spec;
  spec.input_dims.assign(3, 10);
  spec.stalk_dims = {6, 8, 5};
  const Model m = init_model(fully_connected_graph(3), spec, 9);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.shuffle = false;
  const TrainResult r = train(ds, init_train_state(m), cfg);
  std::uint64_t expected = 0;
  for (std::size_t lo = 0; lo < ds.sample_count(); lo += cfg.batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t n = lo; n < std::min(ds.sample_count(), lo + cfg.batch_size); ++n) rows.push_back(n);
    const PresenceMask mask = ds.mask.select(rows);
    for (const auto& e : m.graph().edges())
      expected += 2 * mask.co_observed(e.first, e.second).size() * m.sheaf.edge_dim(e.first, e.second) * 4;
  }
  CHECK(r.ledger.total_bytes() == expected);
  CHECK(r.metrics[0].bytes_cumulative == expected);
  for (const auto& e : r.ledger.entries()) CHECK(e.kind == MessageKind::projection);

  cfg.count_gradient_messages = true;
  const TrainResult g = train(ds, init_train_state(m), cfg);
  CHECK(g.ledger.total_bytes() > expected);
  std::uint64_t projection_bytes = 0;
  for (const auto& e : g.ledger.entries())
    if (e.kind == MessageKind::projection) projection_bytes += e.bytes;
  CHECK(projection_bytes == expected);
}

TEST_CASE("each node only touches the parameters it owns") {
  const MultiViewDataset ds = small_data(10, 8);
  TrainState st = init_train_state(small_model(ds, 12));
  const TrainState before = st;
  TransportLedger ledger;
  Transport transport(3, ledger);
  std::vector<Tensor> inputs = ds.views;
  decentralized_round(st, inputs, ds.mask, small_config(), transport, {1});
  CHECK(st.model.encoders[0] == before.model.encoders[0]);
  CHECK(st.model.encoders[2] == before.model.encoders[2]);
  CHECK_FALSE(st.model.encoders[1] == before.model.encoders[1]);
  for (const auto& d : st.model.graph().directed_edges()) {
    const bool changed = !(st.model.sheaf.restriction(d.from, d.to) == before.model.sheaf.restriction(d.from, d.to));
    CHECK(changed == (d.from == 1));
  }
  for (NodeId i = 0; i < 3; ++i)
    for (auto v : st.versions[i]) CHECK(v == (i == 1 ? 1u : 0u));
  CHECK(owned_parameters(st.model, 1).size() == 2 * st.model.encoders[1].layer_count() + 2 * 2);
}

TEST_CASE("decentralized SGD step equals a centralized gradient step") {
  const MultiViewDataset ds = apply_presence_dropout(small_data(13, 4), 0.25, 2);
  const Model m = small_model(ds, 14);
  TrainConfig cfg = small_config();
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 0.05;
  cfg.weights = {1.0, 1.0, 0.3, 0.2, false};

  TrainState dec = init_train_state(m);
  TransportLedger ledger;
  Transport transport(3, ledger);
  decentralized_round(dec, ds.views, ds.mask, cfg, transport);

  Model central = m;
  Tape tape;
  std::vector<EncoderVars> encs;
  std::vector<Var> h;
  for (NodeId i = 0; i < 3; ++i) {
    encs.push_back(bind_encoder(tape, m.encoders[i]));
    h.push_back(encode_batch(encs.back(), tape.constant(ds.views[i])));
  }
  const SheafVars sv = bind_sheaf(tape, m.sheaf);
  tape.backward(total_loss(sv, h, ds.mask, cfg.weights).total);
  for (NodeId i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < encs[i].weights.size(); ++k) {
      sgd_step(central.encoders[i].weights[k], tape.grad(encs[i].weights[k]), cfg.learning_rate);
      sgd_step(central.encoders[i].biases[k], tape.grad(encs[i].biases[k]), cfg.learning_rate);
    }
  for (std::size_t k = 0; k < sv.restriction.size(); ++k) {
    sgd_step(central.sheaf.restrictions()[k], tape.grad(sv.restriction[k]), cfg.learning_rate);
    sgd_step(central.sheaf.duals()[k], tape.grad(sv.dual[k]), cfg.learning_rate);
  }
  for (NodeId i = 0; i < 3; ++i) {
    const auto a = owned_parameters(static_cast<const Model&>(dec.model), i);
    const auto b = owned_parameters(static_cast<const Model&>(central), i);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(max_abs_diff(*a[k], *b[k]) <= 1e-10);
  }
}

TEST_CASE("checkpoint resume, corruption and digest checks") {
  const MultiViewDataset ds = small_data(15);
  const Model m = small_model(ds, 16);
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  const TrainResult straight = train(ds, init_train_state(m), cfg);

  const fs::path p = temp_path("resume.bin");
  TrainConfig first = cfg;
  first.epochs = 1;
  first.checkpoint_path = p;
  (void)train(ds, init_train_state(m), first);
  std::uint64_t digest = 0;
  TrainState loaded = load_checkpoint(p, &m.graph(), &digest);
  CHECK(digest == first.digest());
  CHECK(loaded.epochs_completed == 1);
  const TrainResult resumed = train(ds, std::move(loaded), cfg);
  CHECK(resumed.state == straight.state);
  CHECK(metrics_json_line(resumed.metrics[0]) == metrics_json_line(straight.metrics[1]));

  auto bytes = read_file_bytes(p);
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS((void)decode_checkpoint(bytes), ChecksumError);

  const CommGraph path_graph = build_graph(3, {{0, 1}, {1, 2}});
  CHECK_THROWS_AS((void)load_checkpoint(p, &path_graph), DigestError);

  auto bad = read_file_bytes(p);
  bad[8] = 7;
  CHECK_THROWS_AS((void)decode_checkpoint(bad), ParseError);
  fs::remove(p);
}

TEST_CASE("degenerate batches are skipped with a warning") {
  MultiViewDataset ds = small_data(17, 4);
  for (std::size_t n = 0; n < ds.sample_count(); ++n)
    for (NodeId i = 0; i < 3; ++i) ds.mask.set(n, i, i == n % 3);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  const TrainResult r = train(ds, init_train_state(small_model(ds, 1)), cfg);
  CHECK(r.metrics[0].skipped == 1);
  CHECK(r.metrics[0].batches == 0);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("skipped") != std::string::npos);
}

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sheafalign/error.hpp"
#include "sheafalign/losses.hpp"

using namespace sheafalign;

namespace {

SheafStructure identity_edge(std::size_t d) {
  SheafStructure s(build_graph(2, {{0, 1}}), {d, d}, {d});
  for (auto& p : s.restrictions()) p = Tensor::identity(d);
  for (auto& q : s.duals()) q = Tensor::identity(d);
  return s;
}

struct Toy {
  SheafStructure sheaf;
  Batch batch;
};

Toy random_toy(std::uint64_t seed, std::size_t nodes, std::size_t B) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 5);
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < nodes; ++i) dims.push_back(dim(rng));
  Toy t{init_sheaf(fully_connected_graph(nodes), dims, std::nullopt, seed), Batch{{}, PresenceMask(B, nodes, true)}};
  for (auto d : dims) t.batch.embeddings.push_back(oracle::random_tensor(rng, B, d));
  t.batch.mask.set(B - 1, 0, false);
  return t;
}

// All three terms evaluated by the oracles, unweighted.
LossBreakdown oracle_terms(const Toy& t, double tau) {
  const SheafStructure& s = t.sheaf;
  LossBreakdown o;
  for (std::size_t n = 0; n < t.batch.size(); ++n) {
    std::vector<std::vector<double>> h;
    for (std::size_t i = 0; i < s.graph().node_count(); ++i) {
      const auto row = t.batch.embeddings[i].row_view(n);
      h.emplace_back(row.begin(), row.end());
    }
    // edge-wise sum, skipping edges with an absent endpoint
    for (const auto& e : s.graph().edges()) {
      if (!t.batch.mask(n, e.first) || !t.batch.mask(n, e.second)) continue;
      const Tensor& P = s.restriction(e.first, e.second);
      const Tensor& R = s.restriction(e.second, e.first);
      for (std::size_t r = 0; r < P.rows(); ++r) {
        double v = 0.0;
        for (std::size_t c = 0; c < P.cols(); ++c) v += P(r, c) * h[e.first][c];
        for (std::size_t c = 0; c < R.cols(); ++c) v -= R(r, c) * h[e.second][c];
        o.laplacian += v * v;
      }
    }
  }
  for (const auto& e : s.graph().edges()) {
    const auto mask = t.batch.mask.pair_mask(e.first, e.second);
    const Tensor pi = oracle::matmul(t.batch.embeddings[e.first], oracle::transpose(s.restriction(e.first, e.second)));
    const Tensor pj = oracle::matmul(t.batch.embeddings[e.second], oracle::transpose(s.restriction(e.second, e.first)));
    o.contrastive += oracle::infonce(pi, pj, mask, tau);
    o.reconstruction += oracle::reconstruction(s.dual(e.first, e.second), s.restriction(e.second, e.first),
                                               t.batch.embeddings[e.first], t.batch.embeddings[e.second], mask);
    o.reconstruction += oracle::reconstruction(s.dual(e.second, e.first), s.restriction(e.first, e.second),
                                               t.batch.embeddings[e.second], t.batch.embeddings[e.first], mask);
  }
  return o;
}

}  // namespace

TEST_CASE("laplacian loss examples") {
  const SheafStructure s = identity_edge(2);
  Batch aligned{{Tensor{{1, 2}, {3, 4}}, Tensor{{1, 2}, {3, 4}}}, PresenceMask(2, 2, true)};
  CHECK(laplacian_loss(s, s.graph(), aligned) == 0.0);
  Batch one{{Tensor{{2, 3}}, Tensor{{1, 2}}}, PresenceMask(1, 2, true)};
  CHECK(laplacian_loss(s, s.graph(), one) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("contrastive closed forms") {
  CHECK(contrastive_edge_loss(Tensor{{0.3, -1.2}}, Tensor{{2.0, 0.1}}, {true}, 0.1) == doctest::Approx(0.0));
  for (std::size_t B : {2u, 4u, 9u}) {
    const Tensor same(B, 3, 0.7);
    CHECK(std::abs(contrastive_edge_loss(same, same, std::vector<bool>(B, true), 0.1) - std::log(double(B))) <= 1e-9);
  }
  const Tensor basis{{1, 0}, {0, 1}};
  CHECK(std::abs(contrastive_edge_loss(basis, basis, {true, true}, 1.0) - 0.31326168751822286) <= 1e-9);
  // 3 of 5 rows present, all identical: 3 ln 3 / 5
  const Tensor same(5, 2, 1.0);
  CHECK(std::abs(contrastive_edge_loss(same, same, {true, false, true, true, false}, 0.5) - 3 * std::log(3.0) / 5) <=
        1e-9);
}

TEST_CASE("contrastive loss matches the InfoNCE oracle and is non-negative") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const std::size_t B = 2 + t % 6;
    const Tensor a = oracle::random_tensor(rng, B, 4), b = oracle::random_tensor(rng, B, 4);
    std::vector<bool> mask(B, true);
    if (t % 3 == 0) mask[t % B] = false;
    const double tau = 0.05 + 0.1 * (t % 4);
    const double got = contrastive_edge_loss(a, b, mask, tau);
    CHECK(std::abs(got - oracle::infonce(a, b, mask, tau)) <= 1e-10 * std::max(1.0, got));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("contrastive loss rejects zero-norm rows and bad temperatures") {
  const Tensor a{{0, 0}, {1, 0}}, b{{1, 1}, {0, 1}};
  CHECK_THROWS_AS((void)contrastive_edge_loss(a, b, {true, true}, 0.1), DegenerateEmbeddingError);
  CHECK_THROWS_AS((void)contrastive_edge_loss(b, b, {true, true}, 0.0), ContractError);
  CHECK_THROWS_AS((void)contrastive_edge_loss(b, b, {false, false}, 0.1), ContractError);
  LossWeights w;
  w.tau = -1;
  CHECK_THROWS_AS(w.validate(), ContractError);
}

TEST_CASE("reconstruction loss examples and oracle") {
  const SheafStructure s = identity_edge(3);
  std::mt19937_64 rng(8);
  const Tensor h = oracle::random_tensor(rng, 4, 3);
  CHECK(reconstruction_loss(s, 0, 1, h, h, std::vector<bool>(4, true)) == 0.0);
  const Tensor other = oracle::random_tensor(rng, 4, 3);
  CHECK(reconstruction_loss(s, 0, 1, h, other, std::vector<bool>(4, false)) == 0.0);

  const SheafStructure r = init_sheaf(build_graph(2, {{0, 1}}), {3, 5}, std::vector<std::size_t>{2}, 3);
  const Tensor h0 = oracle::random_tensor(rng, 6, 3), h1 = oracle::random_tensor(rng, 6, 5);
  const std::vector<bool> mask{true, false, true, true, true, false};
  CHECK(std::abs(reconstruction_loss(r, 0, 1, h0, h1, mask) -
                 oracle::reconstruction(r.dual(0, 1), r.restriction(1, 0), h0, h1, mask)) <= 1e-12);
  CHECK(std::abs(reconstruction_loss(r, 1, 0, h1, h0, mask) -
                 oracle::reconstruction(r.dual(1, 0), r.restriction(0, 1), h1, h0, mask)) <= 1e-12);
}

TEST_CASE("total loss term isolation") {
  const Toy t = random_toy(12, 3, 5);
  const CommGraph& g = t.sheaf.graph();
  CHECK(total_loss(t.sheaf, g, t.batch, {0, 0, 0, 0.1, false}).total == 0.0);
  CHECK(total_loss(t.sheaf, g, t.batch, {1, 0, 0, 0.1, false}).total ==
        doctest::Approx(laplacian_loss(t.sheaf, g, t.batch)).epsilon(1e-12));

  const LossWeights w;  // defaults
  const LossBreakdown o = oracle_terms(t, w.tau);
  const LossBreakdown got = total_loss(t.sheaf, g, t.batch, w);
  CHECK(got.laplacian == doctest::Approx(o.laplacian).epsilon(1e-10));
  CHECK(got.contrastive == doctest::Approx(o.contrastive).epsilon(1e-10));
  CHECK(got.reconstruction == doctest::Approx(o.reconstruction).epsilon(1e-10));
  CHECK(got.total == doctest::Approx(w.lambda * o.laplacian + w.beta * o.contrastive + w.gamma * o.reconstruction)
                         .epsilon(1e-10));
}

TEST_CASE("laplacian loss matches the dense laplacian") {
  const Toy t = random_toy(19, 4, 3);
  Batch full = t.batch;
  full.mask = PresenceMask(3, 4, true);
  const Tensor L = assemble_laplacian(t.sheaf, t.sheaf.graph());
  const auto off = stalk_offsets(t.sheaf);
  double dense = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor h(off.back(), 1);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < t.sheaf.stalk_dim(i); ++k) h(off[i] + k, 0) = full.embeddings[i](n, k);
    dense += oracle::matmul(oracle::matmul(oracle::transpose(h), L), h).item();
  }
  CHECK(laplacian_loss(t.sheaf, t.sheaf.graph(), full) == doctest::Approx(dense).epsilon(1e-10));
}

TEST_CASE("node losses") {
  const LossWeights w;
  const Toy tri = random_toy(5, 3, 6);
  const CommGraph& g = tri.sheaf.graph();
  double sum_nodes = 0.0;
  for (NodeId i = 0; i < 3; ++i) sum_nodes += node_loss(tri.sheaf, g, i, tri.batch, w).total;
  CHECK(sum_nodes == doctest::Approx(2.0 * total_loss(tri.sheaf, g, tri.batch, w).total).epsilon(1e-10));

  const Toy pair = random_toy(6, 2, 4);
  const double total = total_loss(pair.sheaf, pair.sheaf.graph(), pair.batch, w).total;
  CHECK(node_loss(pair.sheaf, pair.sheaf.graph(), 0, pair.batch, w).total == doctest::Approx(total).epsilon(1e-12));
  CHECK(node_loss(pair.sheaf, pair.sheaf.graph(), 1, pair.batch, w).total == doctest::Approx(total).epsilon(1e-12));

  // Node 0 absent everywhere: its incident edges see nothing.
  Toy gone = random_toy(7, 3, 4);
  for (std::size_t n = 0; n < 4; ++n) gone.batch.mask.set(n, 0, false);
  CHECK(node_loss(gone.sheaf, gone.sheaf.graph(), 0, gone.batch, w).total == 0.0);

  const SheafStructure single = init_sheaf(build_graph(1, {}), {3}, std::nullopt, 1);
  Batch b{{Tensor(2, 3, 1.0)}, PresenceMask(2, 1, true)};
  std::vector<std::string> warnings;
  CHECK(node_loss(single, single.graph(), 0, b, w, &warnings).total == 0.0);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("no incident edges") != std::string::npos);
}

TEST_CASE("masking a sample equals deleting it") {
  Toy t = random_toy(9, 3, 6);
  t.batch.mask = PresenceMask(6, 3, true);
  t.batch.mask.set(2, 1, false);
  const LossWeights w;
  const LossBreakdown masked = total_loss(t.sheaf, t.sheaf.graph(), t.batch, w);

  // Drop sample 2 from the edges touching node 1 by deleting the row
  // everywhere and adding back the edge {0,2} contribution of that row.
  Toy cut = t;
  const std::vector<std::size_t> keep{0, 1, 3, 4, 5};
  for (auto& h : cut.batch.embeddings) h = gather_rows(h, keep);
  cut.batch.mask = PresenceMask(5, 3, true);
  Toy row = t;
  for (auto& h : row.batch.embeddings) h = gather_rows(h, std::vector<std::size_t>{2});
  row.batch.mask = PresenceMask(1, 3, true);
  row.batch.mask.set(0, 1, false);
  CHECK(masked.laplacian == doctest::Approx(laplacian_loss(cut.sheaf, cut.sheaf.graph(), cut.batch) +
                                            laplacian_loss(row.sheaf, row.sheaf.graph(), row.batch))
                                .epsilon(1e-12));
  // With the 1/B factor held fixed, the (0,1) contrastive term equals the one on deleted data.
  const Tensor p0 = project(t.sheaf, 0, 1, t.batch.embeddings[0]);
  const Tensor p1 = project(t.sheaf, 1, 0, t.batch.embeddings[1]);
  const double with_mask = contrastive_edge_loss(p0, p1, t.batch.mask.pair_mask(0, 1), w.tau) * 6;
  const double deleted =
      contrastive_edge_loss(gather_rows(p0, keep), gather_rows(p1, keep), std::vector<bool>(5, true), w.tau) * 5;
  CHECK(with_mask == doctest::Approx(deleted).epsilon(1e-12));
  const double rec_mask = reconstruction_loss(t.sheaf, 0, 1, t.batch.embeddings[0], t.batch.embeddings[1],
                                              t.batch.mask.pair_mask(0, 1)) * 6;
  const double rec_del = reconstruction_loss(t.sheaf, 0, 1, cut.batch.embeddings[0], cut.batch.embeddings[1],
                                             std::vector<bool>(5, true)) * 5;
  CHECK(rec_mask == doctest::Approx(rec_del).epsilon(1e-12));
  // Masked rows are never read.
  Toy poisoned = t;
  poisoned.batch.embeddings[1](2, 0) = 1e6;
  CHECK(total_loss(poisoned.sheaf, poisoned.sheaf.graph(), poisoned.batch, w).total ==
        doctest::Approx(masked.total).epsilon(1e-12));
}

TEST_CASE("with gamma = 0 the dual maps get no gradient") {
  const Toy t = random_toy(10, 3, 5);
  Tape tape;
  const SheafVars sv = bind_sheaf(tape, t.sheaf);
  std::vector<Var> h;
  for (const auto& x : t.batch.embeddings) h.push_back(tape.leaf(x));
  tape.backward(total_loss(sv, h, t.batch.mask, {1.0, 1.0, 0.0, 0.1, false}).total);
  for (Var q : sv.dual) CHECK(max_abs(tape.grad(q)) == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  for (int p = 0; p < 8; ++p) {
    const Toy t = random_toy(100 + p, 2 + p % 2, 4);
    const LossWeights w{p % 4 == 1 ? 0.0 : 1.0, p % 4 == 2 ? 0.0 : 1.0, 0.3, 0.5, p % 2 == 1};
    Tape tape;
    const SheafVars sv = bind_sheaf(tape, t.sheaf);
    std::vector<Var> h;
    for (const auto& x : t.batch.embeddings) h.push_back(tape.leaf(x));
    tape.backward(total_loss(sv, h, t.batch.mask, w).total);
    const CommGraph& g = t.sheaf.graph();
    for (std::size_t k = 0; k < sv.restriction.size(); ++k) {
      SheafStructure s = t.sheaf;
      const Tensor fp = finite_difference_gradient(
          [&](const Tensor& x) { s.restrictions()[k] = x; return total_loss(s, g, t.batch, w).total; },
          t.sheaf.restrictions()[k]);
      CHECK(relative_linf_error(tape.grad(sv.restriction[k]), fp) <= 1e-4);
      s = t.sheaf;
      const Tensor fq = finite_difference_gradient(
          [&](const Tensor& x) { s.duals()[k] = x; return total_loss(s, g, t.batch, w).total; }, t.sheaf.duals()[k]);
      CHECK(relative_linf_error(tape.grad(sv.dual[k]), fq) <= 1e-4);
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
      Batch b = t.batch;
      const Tensor fh = finite_difference_gradient(
          [&](const Tensor& x) { b.embeddings[i] = x; return total_loss(t.sheaf, g, b, w).total; },
          t.batch.embeddings[i]);
      CHECK(relative_linf_error(tape.grad(h[i]), fh) <= 1e-4);
    }
  }
}

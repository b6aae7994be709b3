#include "sheafalign/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "sheafalign/autodiff.hpp"
#include "sheafalign/losses.hpp"
#include "sheafalign/rng.hpp"
#include "sheafalign/sheaf.hpp"
#include "sheafalign/trainer.hpp"

namespace sheafalign {

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// Connected random graph: a random spanning tree plus extra edges.
CommGraph random_graph(Rng& rng, std::size_t n) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId i = 1; i < n; ++i) {
    std::uniform_int_distribution<NodeId> parent(0, i - 1);
    edges.emplace_back(parent(rng), i);
  }
  std::bernoulli_distribution extra(0.4);
  for (NodeId a = 0; a < n; ++a)
    for (NodeId b = a + 1; b < n; ++b) {
      const bool present = std::ranges::any_of(edges, [&](const auto& e) {
        return (e.first == a && e.second == b) || (e.first == b && e.second == a);
      });
      if (!present && extra(rng)) edges.emplace_back(a, b);
    }
  return build_graph(n, edges);
}

struct Toy {
  Model model;
  std::vector<Tensor> inputs;
  PresenceMask mask;
};

Toy random_toy(std::uint64_t seed) {
  Rng rng = make_rng(seed, "selfcheck.toy");
  std::uniform_int_distribution<std::size_t> nodes(2, 3), dim(2, 4);
  const std::size_t n = nodes(rng);
  const CommGraph g = random_graph(rng, n);
  ModelSpec spec;
  for (std::size_t i = 0; i < n; ++i) {
    spec.input_dims.push_back(dim(rng));
    spec.stalk_dims.push_back(dim(rng) + 1);
  }
  spec.hidden_widths = std::vector<std::size_t>{3};
  spec.nonlinearity = Nonlinearity::tanh;
  Toy toy;
  toy.model = init_model(g, spec, derive_seed(seed, "selfcheck.model"));
  const std::size_t batch = 4;
  for (std::size_t i = 0; i < n; ++i) toy.inputs.push_back(random_tensor(rng, batch, spec.input_dims[i]));
  toy.mask = PresenceMask(batch, n, true);
  toy.mask.set(batch - 1, n - 1, false);
  return toy;
}

double toy_loss(const Toy& toy, const LossWeights& w) {
  Batch b;
  for (std::size_t i = 0; i < toy.inputs.size(); ++i)
    b.embeddings.push_back(encode_batch(toy.model.encoders[i], toy.inputs[i]));
  b.mask = toy.mask;
  return total_loss(toy.model.sheaf, toy.model.graph(), b, w).total;
}

// All parameters in a fixed order: every encoder tensor, then P, then Q.
std::vector<Tensor*> all_parameters(Model& m) {
  std::vector<Tensor*> out;
  for (auto& enc : m.encoders) {
    for (auto& w : enc.weights) out.push_back(&w);
    for (auto& b : enc.biases) out.push_back(&b);
  }
  for (auto& p : m.sheaf.restrictions()) out.push_back(&p);
  for (auto& q : m.sheaf.duals()) out.push_back(&q);
  return out;
}

std::vector<Tensor> analytic_parameter_gradients(const Toy& toy, const LossWeights& w) {
  Tape tape;
  std::vector<EncoderVars> encs;
  std::vector<Var> h;
  for (std::size_t i = 0; i < toy.inputs.size(); ++i) {
    encs.push_back(bind_encoder(tape, toy.model.encoders[i]));
    h.push_back(encode_batch(encs.back(), tape.constant(toy.inputs[i])));
  }
  SheafVars sv = bind_sheaf(tape, toy.model.sheaf);
  Var loss = total_loss(sv, h, toy.mask, w).total;
  tape.backward(loss);
  std::vector<Tensor> out;
  for (const auto& e : encs) {
    for (Var v : e.weights) out.push_back(tape.grad(v));
    for (Var v : e.biases) out.push_back(tape.grad(v));
  }
  for (Var v : sv.restriction) out.push_back(tape.grad(v));
  for (Var v : sv.dual) out.push_back(tape.grad(v));
  return out;
}

double worst_embedding_gradient_error(const Toy& toy, const LossWeights& w) {
  std::vector<Tensor> h;
  for (std::size_t i = 0; i < toy.inputs.size(); ++i) h.push_back(encode_batch(toy.model.encoders[i], toy.inputs[i]));
  Tape tape;
  std::vector<Var> hv;
  for (const auto& x : h) hv.push_back(tape.leaf(x));
  SheafVars sv = bind_sheaf(tape, toy.model.sheaf, false);
  Var loss = total_loss(sv, hv, toy.mask, w).total;
  tape.backward(loss);
  double worst = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Tensor fd = finite_difference_gradient(
        [&](const Tensor& x) {
          Batch b{h, toy.mask};
          b.embeddings[i] = x;
          return total_loss(toy.model.sheaf, toy.model.graph(), b, w).total;
        },
        h[i]);
    worst = std::max(worst, relative_linf_error(tape.grad(hv[i]), fd));
  }
  return worst;
}

std::string format_error(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

CheckResult check_laplacian_equivalence(std::uint64_t seed, std::size_t configs) {
  CheckResult r{"laplacian_equivalence", true, 0.0, 1e-10, ""};
  for (std::size_t c = 0; c < configs; ++c) {
    Rng rng = make_rng(seed, "selfcheck.laplacian", c);
    std::uniform_int_distribution<std::size_t> nodes(3, 6), dim(2, 8);
    const std::size_t n = nodes(rng);
    const CommGraph g = random_graph(rng, n);
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < n; ++i) dims.push_back(dim(rng));
    const SheafStructure s = init_sheaf(g, dims, std::nullopt, derive_seed(seed, "selfcheck.sheaf", c));
    const auto off = stalk_offsets(s);
    Batch b{{}, PresenceMask(1, n, true)};
    Tensor stacked(off.back(), 1);
    for (std::size_t i = 0; i < n; ++i) {
      b.embeddings.push_back(random_tensor(rng, 1, dims[i]));
      for (std::size_t k = 0; k < dims[i]; ++k) stacked(off[i] + k, 0) = b.embeddings[i](0, k);
    }
    const double edgewise = quadratic_form_edgewise(s, g, b).total;
    const double assembled = matmul(matmul(transpose(stacked), assemble_laplacian(s, g)), stacked).item();
    const double err = std::abs(edgewise - assembled) / std::max(std::abs(assembled), 1e-300);
    r.measured = std::max(r.measured, err);
  }
  r.passed = r.measured <= r.tolerance;
  r.detail = std::to_string(configs) + " configs, worst relative error " + format_error(r.measured);
  return r;
}

CheckResult check_laplacian_psd(std::uint64_t seed, std::size_t probes) {
  CheckResult r{"laplacian_symmetric_psd", true, 0.0, 1e-9, ""};
  Rng rng = make_rng(seed, "selfcheck.psd");
  const CommGraph g = random_graph(rng, 5);
  const std::vector<std::size_t> dims{3, 5, 2, 8, 4};
  const SheafStructure s = init_sheaf(g, dims, std::nullopt, derive_seed(seed, "selfcheck.psd.sheaf"));
  const Tensor L = assemble_laplacian(s, g);
  const double asym = max_abs_diff(L, transpose(L));
  double most_negative = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    const Tensor v = random_tensor(rng, L.rows(), 1);
    most_negative = std::min(most_negative, matmul(matmul(transpose(v), L), v).item());
  }
  r.measured = std::max(asym, -most_negative);
  r.passed = asym <= 1e-12 && most_negative >= -1e-9;
  r.detail = "asymmetry " + format_error(asym) + ", min v^T L v " + format_error(most_negative);
  return r;
}

CheckResult check_loss_gradients(std::uint64_t seed, std::size_t points) {
  CheckResult r{"loss_gradients", true, 0.0, 1e-4, ""};
  for (std::size_t p = 0; p < points; ++p) {
    Toy toy = random_toy(derive_seed(seed, "selfcheck.gradient", p));
    LossWeights w;
    w.tau = 0.5;
    switch (p % 4) {
      case 0: w = {1.0, 0.0, 0.0, w.tau, false}; break;
      case 1: w = {0.0, 1.0, 0.0, w.tau, p % 8 == 5}; break;
      case 2: w = {0.0, 0.0, 1.0, w.tau, false}; break;
      default: w = {1.0, 1.0, 0.1, w.tau, false}; break;
    }
    const auto analytic = analytic_parameter_gradients(toy, w);
    const auto params = all_parameters(toy.model);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor original = *params[k];
      const Tensor fd = finite_difference_gradient(
          [&](const Tensor& x) {
            *params[k] = x;
            return toy_loss(toy, w);
          },
          original);
      *params[k] = original;
      r.measured = std::max(r.measured, relative_linf_error(analytic[k], fd));
    }
    r.measured = std::max(r.measured, worst_embedding_gradient_error(toy, w));
  }
  r.passed = r.measured <= r.tolerance;
  r.detail = std::to_string(points) + " points, worst relative error " + format_error(r.measured);
  return r;
}

CheckResult check_contrastive_closed_forms() {
  CheckResult r{"contrastive_closed_forms", true, 0.0, 1e-9, ""};
  const Tensor one{{0.3, -1.2, 0.7}};
  const double single = contrastive_edge_loss(one, one, {true}, 0.1);
  Tensor same(4, 3, 1.0);
  const double identical = contrastive_edge_loss(same, same, std::vector<bool>(4, true), 1.0);
  const Tensor basis{{1.0, 0.0}, {0.0, 1.0}};
  const double ortho = contrastive_edge_loss(basis, basis, {true, true}, 1.0);
  const double e1 = std::abs(single);
  const double e2 = std::abs(identical - std::log(4.0));
  const double e3 = std::abs(ortho - std::log1p(std::exp(-1.0)));
  r.measured = std::max({e1, e2, e3});
  r.passed = e1 <= 1e-12 && e2 <= 1e-9 && e3 <= 1e-9;
  r.detail = "B=1 " + format_error(e1) + ", identical " + format_error(e2) + ", orthonormal " + format_error(e3);
  return r;
}

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
  return {check_laplacian_equivalence(seed), check_laplacian_psd(seed), check_loss_gradients(seed),
          check_contrastive_closed_forms()};
}

}  // namespace sheafalign

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "sheafalign/error.hpp"
#include "sheafalign/model.hpp"

using namespace sheafalign;

TEST_CASE("zero-initialized encoder maps everything to zero") {
  const Encoder enc = init_encoder({4, 4}, Nonlinearity::identity, 1, true);
  std::mt19937_64 rng(2);
  CHECK(encode_batch(enc, oracle::random_tensor(rng, 6, 4)) == Tensor(6, 4));
}

TEST_CASE("encoder init is deterministic per seed") {
  CHECK(init_encoder({5, 7, 3}, Nonlinearity::relu, 11) == init_encoder({5, 7, 3}, Nonlinearity::relu, 11));
  CHECK_FALSE(init_encoder({5, 7, 3}, Nonlinearity::relu, 11) == init_encoder({5, 7, 3}, Nonlinearity::relu, 12));
}

TEST_CASE("parameter count") {
  // 8*16 + 16 + 16*4 + 4
  CHECK(init_encoder({8, 16, 4}, Nonlinearity::relu, 0).parameter_count() == 212);
  CHECK(default_encoder_widths(10, 6) == std::vector<std::size_t>{10, 12, 6});
}

TEST_CASE("identity weights pass the input through") {
  Encoder enc = init_encoder({3, 3}, Nonlinearity::identity, 0, true);
  enc.weights[0] = Tensor::identity(3);
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor(rng, 5, 3);
  CHECK(encode_batch(enc, x) == x);
}

TEST_CASE("relu zeroes a hidden layer of negative pre-activations") {
  Encoder enc = init_encoder({2, 3, 2}, Nonlinearity::relu, 0, true);
  enc.weights[0] = Tensor{{1, 1, 1}, {1, 1, 1}};
  enc.biases[0] = Tensor{{-100, -100, -100}};
  enc.weights[1] = Tensor(3, 2, 1.0);
  enc.biases[1] = Tensor{{0.5, -0.25}};
  const Tensor y = encode_batch(enc, Tensor{{1, 2}, {-3, 4}});
  CHECK(y == Tensor{{0.5, -0.25}, {0.5, -0.25}});
}

TEST_CASE("encoder forward matches a layer-by-layer oracle") {
  std::mt19937_64 rng(4);
  for (Nonlinearity nl : {Nonlinearity::relu, Nonlinearity::tanh, Nonlinearity::identity}) {
    Encoder enc = init_encoder({4, 6, 5, 3}, nl, 9);
    for (auto& b : enc.biases) b = oracle::random_tensor(rng, 1, b.cols(), 0.3);
    const Tensor x = oracle::random_tensor(rng, 7, 4);
    Tensor a = x;
    for (std::size_t k = 0; k < 3; ++k) {
      Tensor z = oracle::matmul(a, enc.weights[k]);
      for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t c = 0; c < z.cols(); ++c) {
          z(r, c) += enc.biases[k](0, c);
          if (k < 2 && nl == Nonlinearity::relu) z(r, c) = std::max(0.0, z(r, c));
          if (k < 2 && nl == Nonlinearity::tanh) z(r, c) = std::tanh(z(r, c));
        }
      a = z;
    }
    CHECK(max_abs_diff(encode_batch(enc, x), a) <= 1e-12);

    Tape tape;
    const EncoderVars v = bind_encoder(tape, enc);
    CHECK(max_abs_diff(encode_batch(v, tape.constant(x)).value(), a) <= 1e-12);
  }
}

TEST_CASE("encoder parameter gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (Nonlinearity nl : {Nonlinearity::tanh, Nonlinearity::identity}) {
    Encoder enc = init_encoder({3, 4, 2}, nl, 21);
    const Tensor x = oracle::random_tensor(rng, 5, 3);
    const Tensor weight = oracle::random_tensor(rng, 5, 2);
    auto scalar = [&](const Encoder& e) { return sum(hadamard(encode_batch(e, x), encode_batch(e, x))) + sum(hadamard(weight, encode_batch(e, x))); };
    Tape tape;
    const EncoderVars v = bind_encoder(tape, enc);
    const Var y = encode_batch(v, tape.constant(x));
    tape.backward(sum_squares(y) + sum(hadamard(tape.constant(weight), y)));
    for (std::size_t k = 0; k < enc.layer_count(); ++k) {
      Encoder e = enc;
      const Tensor fw = finite_difference_gradient([&](const Tensor& w) { e.weights[k] = w; return scalar(e); }, enc.weights[k]);
      CHECK(relative_linf_error(tape.grad(v.weights[k]), fw) <= 1e-4);
      e = enc;
      const Tensor fb = finite_difference_gradient([&](const Tensor& b) { e.biases[k] = b; return scalar(e); }, enc.biases[k]);
      CHECK(relative_linf_error(tape.grad(v.biases[k]), fb) <= 1e-4);
    }
  }
}

TEST_CASE("encoder errors") {
  CHECK_THROWS_AS((void)init_encoder({4, 0, 2}, Nonlinearity::relu, 0), StructureError);
  CHECK_THROWS_AS((void)init_encoder({4}, Nonlinearity::relu, 0), StructureError);
  const Encoder enc = init_encoder({4, 2}, Nonlinearity::relu, 0);
  CHECK_THROWS_AS((void)encode_batch(enc, Tensor(3, 5)), DimensionError);
  CHECK_THROWS_AS((void)parse_nonlinearity("gelu"), Error);
  CHECK(parse_nonlinearity(to_string(Nonlinearity::tanh)) == Nonlinearity::tanh);
}

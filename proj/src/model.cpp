#include "sheafalign/model.hpp"

#include <cmath>

#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "relu") return Nonlinearity::relu;
  if (name == "tanh") return Nonlinearity::tanh;
  if (name == "identity") return Nonlinearity::identity;
  throw Error("unknown nonlinearity '" + name + "' (expected relu, tanh or identity)");
}

std::string to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::relu:
      return "relu";
    case Nonlinearity::tanh:
      return "tanh";
    case Nonlinearity::identity:
      return "identity";
  }
  return "?";
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
  return n;
}

Encoder init_encoder(const std::vector<std::size_t>& widths, Nonlinearity nl, std::uint64_t seed,
                     bool zero_init) {
  if (widths.size() < 2) throw StructureError("encoder needs at least an input and an output width");
  for (std::size_t k = 0; k < widths.size(); ++k)
    if (widths[k] == 0) throw StructureError("encoder width " + std::to_string(k) + " is 0");
  Encoder enc;
  enc.widths = widths;
  enc.nonlinearity = nl;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    Tensor w(widths[k], widths[k + 1]);
    if (!zero_init) {
      Rng rng = make_rng(seed, "encoder.layer", k);
      const double a = std::sqrt(6.0 / static_cast<double>(widths[k] + widths[k + 1]));
      std::uniform_real_distribution<double> dist(-a, a);
      for (double& v : w.data()) v = dist(rng);
    }
    enc.weights.push_back(std::move(w));
    enc.biases.emplace_back(1, widths[k + 1]);
  }
  return enc;
}

std::vector<std::size_t> default_encoder_widths(std::size_t in_dim, std::size_t out_dim) {
  return {in_dim, 2 * out_dim, out_dim};
}

namespace {

void check_input(const Encoder& enc, const Tensor& x) {
  if (x.cols() != enc.input_dim()) {
    throw DimensionError("encoder expects input width " + std::to_string(enc.input_dim()) + ", got " +
                         x.shape_string());
  }
}

}  // namespace

Tensor encode_batch(const Encoder& enc, const Tensor& x) {
  check_input(enc, x);
  Tensor a = x;
  for (std::size_t k = 0; k < enc.layer_count(); ++k) {
    Tensor z = matmul(a, enc.weights[k]);
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += enc.biases[k](0, c);
    if (k + 1 < enc.layer_count()) {
      for (double& v : z.data()) {
        if (enc.nonlinearity == Nonlinearity::relu) v = v > 0.0 ? v : 0.0;
        else if (enc.nonlinearity == Nonlinearity::tanh) v = std::tanh(v);
      }
    }
    a = std::move(z);
  }
  return a;
}

EncoderVars bind_encoder(Tape& tape, const Encoder& enc, bool trainable) {
  EncoderVars v;
  v.encoder = &enc;
  for (std::size_t k = 0; k < enc.layer_count(); ++k) {
    v.weights.push_back(trainable ? tape.leaf(enc.weights[k]) : tape.constant(enc.weights[k]));
    v.biases.push_back(trainable ? tape.leaf(enc.biases[k]) : tape.constant(enc.biases[k]));
  }
  return v;
}

Var encode_batch(const EncoderVars& enc, Var x) {
  check_input(*enc.encoder, x.value());
  Var a = x;
  const std::size_t layers = enc.weights.size();
  for (std::size_t k = 0; k < layers; ++k) {
    a = add_row_broadcast(matmul(a, enc.weights[k]), enc.biases[k]);
    if (k + 1 < layers) {
      if (enc.encoder->nonlinearity == Nonlinearity::relu) a = relu(a);
      else if (enc.encoder->nonlinearity == Nonlinearity::tanh) a = tanh(a);
    }
  }
  return a;
}

}  // namespace sheafalign

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sheafalign/autodiff.hpp"
#include "sheafalign/tensor.hpp"

namespace sheafalign {

enum class Nonlinearity { relu, tanh, identity };

Nonlinearity parse_nonlinearity(const std::string& name);
std::string to_string(Nonlinearity nl);

/// MLP encoder f_i. Layer k computes a W_k + b_k with W_k of shape
/// widths[k] x widths[k+1]; the nonlinearity is applied after every layer
/// except the last.
struct Encoder {
  std::vector<std::size_t> widths;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Nonlinearity nonlinearity = Nonlinearity::relu;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return weights.size(); }
  std::size_t parameter_count() const;

  friend bool operator==(const Encoder&, const Encoder&) = default;
};

Encoder init_encoder(const std::vector<std::size_t>& widths, Nonlinearity nl, std::uint64_t seed,
                     bool zero_init = false);

/// The default architecture: one hidden layer of width 2 * out_dim.
std::vector<std::size_t> default_encoder_widths(std::size_t in_dim, std::size_t out_dim);

Tensor encode_batch(const Encoder& enc, const Tensor& x);

struct EncoderVars {
  const Encoder* encoder = nullptr;
  std::vector<Var> weights;
  std::vector<Var> biases;
};

EncoderVars bind_encoder(Tape& tape, const Encoder& enc, bool trainable = true);
Var encode_batch(const EncoderVars& enc, Var x);

}  // namespace sheafalign

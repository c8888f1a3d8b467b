#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctgraph/autodiff.hpp"

namespace ctgraph {

enum class Activation { gelu, relu, identity };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

// y = x W + b, W stored (in x out).
struct Linear {
  Parameter weight;
  Parameter bias;

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  // Xavier-uniform weights, zero bias.
  static Linear init(std::string name, std::size_t in, std::size_t out, std::uint64_t seed);
};

struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::gelu;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  // widths = {in, hidden..., out}; one Linear per consecutive pair.
  static Mlp init(const std::string& name, std::span<const std::size_t> widths, std::uint64_t seed,
                  Activation act = Activation::gelu);
};

// Throws DimensionError if consecutive layers do not chain.
void validate_chain(const Mlp& mlp);

ad::Var linear_forward(ad::Tape& tape, const ad::Var& x, Linear& layer);
// Affine then activation for every layer except the last, which is affine only.
ad::Var mlp_forward(ad::Tape& tape, const ad::Var& x, Mlp& mlp);

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

// One decoupled-weight-decay Adam step over params using their .grad.
void adamw_step(std::span<Parameter* const> params, AdamWState& state, const AdamWConfig& cfg);

// 64-bit splitmix mixing; derives independent stream seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ctgraph

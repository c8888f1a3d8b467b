#include "ctgraph/nn.hpp"

#include <cmath>
#include <random>

#include "ctgraph/error.hpp"

namespace ctgraph {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Activation parse_activation(const std::string& name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

Linear Linear::init(std::string name, std::size_t in, std::size_t out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({in, out}, 0.0);
  for (double& v : w.storage()) v = dist(rng);
  Linear l;
  l.weight = Parameter(name + ".weight", std::move(w));
  l.bias = Parameter(name + ".bias", Tensor({1, out}, 0.0));
  return l;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.value.numel() + l.bias.value.numel();
  return n;
}

Mlp Mlp::init(const std::string& name, std::span<const std::size_t> widths, std::uint64_t seed,
              Activation act) {
  if (widths.size() < 2) throw DimensionError("mlp needs at least an input and output width");
  Mlp m;
  m.activation = act;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(Linear::init(name + "." + std::to_string(i), widths[i], widths[i + 1],
                                    mix_seed(seed, i)));
  return m;
}

void validate_chain(const Mlp& mlp) {
  if (mlp.layers.empty()) throw DimensionError("mlp has no layers");
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    if (l.bias.value.numel() != l.out_dim())
      throw DimensionError("mlp layer " + std::to_string(i) + ": bias " +
                           shape_str(l.bias.value.shape()) + " does not match weight " +
                           shape_str(l.weight.value.shape()));
    if (i + 1 < mlp.layers.size() && l.out_dim() != mlp.layers[i + 1].in_dim())
      throw DimensionError("mlp chain break between layer " + std::to_string(i) + " " +
                           shape_str(l.weight.value.shape()) + " and layer " +
                           std::to_string(i + 1) + " " +
                           shape_str(mlp.layers[i + 1].weight.value.shape()));
  }
}

ad::Var linear_forward(ad::Tape& tape, const ad::Var& x, Linear& layer) {
  return ad::add_row(ad::matmul(x, tape.parameter(layer.weight)), tape.parameter(layer.bias));
}

ad::Var mlp_forward(ad::Tape& tape, const ad::Var& x, Mlp& mlp) {
  validate_chain(mlp);
  if (x.cols() != mlp.in_dim())
    throw DimensionError("mlp input " + shape_str(x.shape()) + " does not match first layer " +
                         shape_str(mlp.layers.front().weight.value.shape()));
  ad::Var h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = linear_forward(tape, h, mlp.layers[i]);
    if (i + 1 == mlp.layers.size()) break;
    switch (mlp.activation) {
      case Activation::gelu: h = ad::gelu(h); break;
      case Activation::relu: h = ad::relu(h); break;
      case Activation::identity: break;
    }
  }
  return h;
}

void adamw_step(std::span<Parameter* const> params, AdamWState& state, const AdamWConfig& cfg) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape(), 0.0);
      state.v.emplace_back(p->value.shape(), 0.0);
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (p.grad.numel() != p.value.numel() || state.m[k].numel() != p.value.numel())
      throw DimensionError("adamw: parameter '" + p.name + "' shape disagrees with its state");
    auto& w = p.value.storage();
    const auto& g = p.grad.storage();
    auto& m = state.m[k].storage();
    auto& v = state.v[k].storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
    }
  }
}

}  // namespace ctgraph

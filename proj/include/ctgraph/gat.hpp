#pragma once

// Two-stage hierarchical graph attention.
//
// Stage 1 updates every coarse node from its fine children plus itself.
// Stage 2 updates the global node from the coarse outputs plus itself and
// adds the un-normalized global embedding back as a skip. Before each stage
// the participating node features go through that stage's LayerNorm.
//
// Per head, for target t attending over group G (self last):
//   e_v = LReLU(a_src . (W h_v) + a_dst . (W h_t)),  alpha = softmax_G(e)
//   out_t = sum_v alpha_v W h_v
// Heads are concatenated back to d_h.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "ctgraph/autodiff.hpp"
#include "ctgraph/graph.hpp"
#include "ctgraph/nn.hpp"
#include "ctgraph/pooling.hpp"

namespace ctgraph {

struct GatConfig {
  std::size_t fine_in = 0;    // C_total
  std::size_t global_in = 0;  // 32 * C_L
  std::size_t d_h = 256;
  std::size_t heads = 4;
  std::size_t export_dim = 64;
  double slope = 0.2;
  double ln_eps = 1e-5;
  Activation activation = Activation::gelu;
  std::uint64_t seed = 0;

  std::size_t d_head() const { return d_h / heads; }
  void validate() const;
  nlohmann::json to_json() const;
  static GatConfig from_json(const nlohmann::json& j);
};

struct AttentionHead {
  Parameter w;  // d_h x d_head
  Parameter a;  // 1 x 2*d_head: source half then target half
};

struct AttentionStage {
  Parameter gamma;  // 1 x d_h
  Parameter beta;
  std::vector<AttentionHead> heads;

  std::vector<Parameter*> parameters();
};

class GatModel {
 public:
  GatModel() = default;
  static GatModel init(const GatConfig& cfg);

  const GatConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;
  void zero_grad();

  // Directory holding config.json and params.bin.
  void save(const std::filesystem::path& dir) const;
  static GatModel load(const std::filesystem::path& dir);

  Mlp fine_mlp;    // C_total -> d_h -> d_h
  Mlp coarse_mlp;  // C_total -> d_h -> d_h
  Mlp global_mlp;  // 32*C_L -> d_h -> d_h
  AttentionStage stage1;
  AttentionStage stage2;
  Mlp output_mlp;  // d_h -> d_h -> export_dim, shared by every token

 private:
  GatConfig cfg_;
};

struct NodeEmbeddings {
  ad::Var fine;    // F x d_h
  ad::Var coarse;  // C x d_h (unset when the graph has no coarse nodes)
  ad::Var global;  // 1 x d_h
};

// One softmax group: `members` are graph node indices with the target last.
struct AlphaGroup {
  int stage = 1;
  std::size_t target = 0;
  std::size_t head = 0;
  std::vector<std::size_t> members;
  std::vector<double> alpha;
};

NodeEmbeddings embed_nodes(ad::Tape& tape, const PooledVars& pooled, GatModel& model,
                           bool with_coarse = true);

// Generic attention: `normed` rows are (already normalized) node features,
// `groups[k]` the member rows for target k with the target row last.
// Returns (targets x d_h). Member node indices for the alpha table come from
// `node_ids` (row -> graph node index).
ad::Var multi_head_attention(ad::Tape& tape, const ad::Var& normed,
                             const std::vector<std::vector<std::size_t>>& groups, AttentionStage& stage,
                             double slope, int stage_no, std::span<const std::size_t> node_ids,
                             std::vector<AlphaGroup>* alphas);

struct StageOutput {
  ad::Var updated;  // coarse: C x d_h; global: 1 x d_h
  std::vector<AlphaGroup> alphas;
};

// Uses graph.sources_of for every coarse node; invalid fine nodes are dropped.
StageOutput attend_fine_to_coarse(ad::Tape& tape, const RegionGraph& graph, const NodeEmbeddings& h,
                                  const std::vector<bool>& fine_valid, GatModel& model);
// `sources` are the rows attended by the global node (coarse h_c' for
// hierarchical graphs, fine h_f for single-level); `source_valid` per row.
StageOutput attend_coarse_to_global(ad::Tape& tape, const RegionGraph& graph, const ad::Var& sources,
                                    const ad::Var& h_global, const std::vector<bool>& source_valid,
                                    GatModel& model);

struct GatOutputs {
  NodeEmbeddings embeddings;
  ad::Var coarse_updated;  // h_c' (unset without coarse nodes)
  ad::Var global_updated;  // h_g'
  ad::Var tokens;          // n_tokens x export_dim: global, coarse by id, fine by id
  std::vector<AlphaGroup> alphas;
};

GatOutputs gat_forward(ad::Tape& tape, const PooledVars& pooled, const RegionGraph& graph, GatModel& model);

// Convenience: forward on constants and return the token matrix.
Tensor infer_tokens(const PooledFeatures& feats, const RegionGraph& graph, GatModel& model);

GatConfig gat_config_for(const PooledFeatures& feats);

}  // namespace ctgraph

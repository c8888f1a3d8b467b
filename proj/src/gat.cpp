#include "ctgraph/gat.hpp"

#include <random>

#include "ctgraph/container.hpp"
#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"

namespace ctgraph {

void GatConfig::validate() const {
  if (fine_in == 0 || global_in == 0 || d_h == 0 || heads == 0 || export_dim == 0)
    throw ValidationError("gat config: every dimension must be positive");
  if (d_h % heads != 0)
    throw ValidationError("gat config: d_h " + std::to_string(d_h) + " is not divisible by " +
                          std::to_string(heads) + " heads");
  if (!(slope > 0.0 && slope < 1.0)) throw ValidationError("gat config: slope must lie in (0, 1)");
  if (!(ln_eps > 0.0)) throw ValidationError("gat config: ln_eps must be positive");
}

nlohmann::json GatConfig::to_json() const {
  return {{"fine_in", fine_in},       {"global_in", global_in}, {"d_h", d_h},
          {"heads", heads},           {"export_dim", export_dim}, {"slope", slope},
          {"ln_eps", ln_eps},         {"activation", to_string(activation)}, {"seed", seed}};
}

GatConfig GatConfig::from_json(const nlohmann::json& j) {
  GatConfig c;
  c.fine_in = j.value("fine_in", c.fine_in);
  c.global_in = j.value("global_in", c.global_in);
  c.d_h = j.value("d_h", c.d_h);
  c.heads = j.value("heads", c.heads);
  c.export_dim = j.value("export_dim", c.export_dim);
  c.slope = j.value("slope", c.slope);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.activation = parse_activation(j.value("activation", std::string("gelu")));
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<Parameter*> AttentionStage::parameters() {
  std::vector<Parameter*> out{&gamma, &beta};
  for (auto& h : heads) {
    out.push_back(&h.w);
    out.push_back(&h.a);
  }
  return out;
}

namespace {

AttentionStage init_stage(const std::string& name, const GatConfig& cfg, std::uint64_t seed) {
  AttentionStage s;
  s.gamma = Parameter(name + ".gamma", Tensor({1, cfg.d_h}, 1.0));
  s.beta = Parameter(name + ".beta", Tensor({1, cfg.d_h}, 0.0));
  const std::size_t dh = cfg.d_head();
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const std::string hn = name + ".head" + std::to_string(k);
    Linear w = Linear::init(hn, cfg.d_h, dh, mix_seed(seed, 2 * k));
    std::mt19937_64 rng(mix_seed(seed, 2 * k + 1));
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * dh + 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor a({1, 2 * dh}, 0.0);
    for (double& v : a.storage()) v = dist(rng);
    s.heads.push_back({Parameter(hn + ".w", w.weight.value), Parameter(hn + ".a", std::move(a))});
  }
  return s;
}

}  // namespace

GatModel GatModel::init(const GatConfig& cfg) {
  cfg.validate();
  GatModel m;
  m.cfg_ = cfg;
  const std::size_t fine_w[] = {cfg.fine_in, cfg.d_h, cfg.d_h};
  const std::size_t global_w[] = {cfg.global_in, cfg.d_h, cfg.d_h};
  const std::size_t out_w[] = {cfg.d_h, cfg.d_h, cfg.export_dim};
  m.fine_mlp = Mlp::init("fine_mlp", fine_w, mix_seed(cfg.seed, 1), cfg.activation);
  m.coarse_mlp = Mlp::init("coarse_mlp", fine_w, mix_seed(cfg.seed, 2), cfg.activation);
  m.global_mlp = Mlp::init("global_mlp", global_w, mix_seed(cfg.seed, 3), cfg.activation);
  m.stage1 = init_stage("stage1", cfg, mix_seed(cfg.seed, 4));
  m.stage2 = init_stage("stage2", cfg, mix_seed(cfg.seed, 5));
  m.output_mlp = Mlp::init("output_mlp", out_w, mix_seed(cfg.seed, 6), cfg.activation);
  return m;
}

std::vector<Parameter*> GatModel::parameters() {
  std::vector<Parameter*> out;
  for (Mlp* mlp : {&fine_mlp, &coarse_mlp, &global_mlp}) {
    auto p = mlp->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  for (AttentionStage* s : {&stage1, &stage2}) {
    auto p = s->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  auto p = output_mlp.parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::size_t GatModel::parameter_count() const {
  std::size_t n = 0;
  for (Parameter* p : const_cast<GatModel*>(this)->parameters()) n += p->value.numel();
  return n;
}

void GatModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

void GatModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "config.json", cfg_.to_json());
  Container c;
  for (Parameter* p : const_cast<GatModel*>(this)->parameters()) c.add(p->name, p->value);
  write_container(dir / "params.bin", c);
}

GatModel GatModel::load(const std::filesystem::path& dir) {
  GatConfig cfg;
  try {
    cfg = GatConfig::from_json(read_json_file(dir / "config.json", "gat config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("gat config '" + (dir / "config.json").string() + "': " + e.what());
  }
  GatModel m = init(cfg);
  const Container c = read_container(dir / "params.bin");
  for (Parameter* p : m.parameters()) {
    Tensor t = c.get(p->name).tensor();
    if (t.shape() != p->value.shape())
      throw FormatError("checkpoint parameter '" + p->name + "' has shape " + shape_str(t.shape()) +
                        ", config implies " + shape_str(p->value.shape()));
    p->value = std::move(t);
  }
  return m;
}

NodeEmbeddings embed_nodes(ad::Tape& tape, const PooledVars& pooled, GatModel& model, bool with_coarse) {
  const GatConfig& cfg = model.config();
  auto check = [](const ad::Var& v, std::size_t want, const char* what) {
    if (v.cols() != want)
      throw DimensionError(std::string(what) + " features have " + std::to_string(v.cols()) +
                           " columns, model expects " + std::to_string(want));
  };
  check(pooled.fine, cfg.fine_in, "fine");
  check(pooled.global, cfg.global_in, "global");
  NodeEmbeddings h;
  h.fine = mlp_forward(tape, pooled.fine, model.fine_mlp);
  if (with_coarse) {
    check(pooled.coarse, cfg.fine_in, "coarse");
    h.coarse = mlp_forward(tape, pooled.coarse, model.coarse_mlp);
  }
  h.global = mlp_forward(tape, pooled.global, model.global_mlp);
  return h;
}

ad::Var multi_head_attention(ad::Tape& tape, const ad::Var& normed,
                             const std::vector<std::vector<std::size_t>>& groups, AttentionStage& stage,
                             double slope, int stage_no, std::span<const std::size_t> node_ids,
                             std::vector<AlphaGroup>* alphas) {
  std::vector<ad::Var> head_out;
  for (std::size_t k = 0; k < stage.heads.size(); ++k) {
    AttentionHead& head = stage.heads[k];
    const std::size_t dh = head.w.value.cols();
    const ad::Var wh = ad::matmul(normed, tape.parameter(head.w));
    const ad::Var a = tape.parameter(head.a);
    const ad::Var s_src = ad::matmul(wh, ad::transpose(ad::slice_cols(a, 0, dh)));
    const ad::Var s_dst = ad::matmul(wh, ad::transpose(ad::slice_cols(a, dh, 2 * dh)));
    std::vector<ad::Var> rows;
    for (const auto& group : groups) {
      const std::size_t target = group.back();
      const std::size_t tgt[] = {target};
      const ad::Var e = ad::leaky_relu(
          ad::add_scalar(ad::gather_rows(s_src, group), ad::gather_rows(s_dst, tgt)), slope);
      const ad::Var alpha = ad::softmax(e);
      rows.push_back(ad::matmul(ad::transpose(alpha), ad::gather_rows(wh, group)));
      if (alphas) {
        AlphaGroup g;
        g.stage = stage_no;
        g.target = node_ids[target];
        g.head = k;
        for (auto m : group) g.members.push_back(node_ids[m]);
        const auto& av = alpha.value().storage();
        g.alpha.assign(av.begin(), av.end());
        alphas->push_back(std::move(g));
      }
    }
    head_out.push_back(ad::concat_rows(rows));
  }
  return ad::concat_cols(head_out);
}

namespace {

ad::Var stage_norm(ad::Tape& tape, const ad::Var& x, AttentionStage& s, double eps) {
  return ad::layer_norm(x, tape.parameter(s.gamma), tape.parameter(s.beta), eps);
}

}  // namespace

StageOutput attend_fine_to_coarse(ad::Tape& tape, const RegionGraph& graph, const NodeEmbeddings& h,
                                  const std::vector<bool>& fine_valid, GatModel& model) {
  const std::size_t F = graph.num_fine(), C = graph.num_coarse();
  if (C == 0) throw ValidationError("fine-to-coarse attention needs coarse nodes");
  if (h.fine.rows() != F || h.coarse.rows() != C)
    throw DimensionError("embeddings do not match graph node counts");
  const std::vector<ad::Var> parts{h.fine, h.coarse};
  const ad::Var normed = stage_norm(tape, ad::concat_rows(parts), model.stage1, model.config().ln_eps);
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::size_t> g;
    for (auto s : graph.sources_of(F + c))
      if (s < F && (fine_valid.empty() || fine_valid[s])) g.push_back(s);
    g.push_back(F + c);
    groups.push_back(std::move(g));
  }
  std::vector<std::size_t> ids(F + C);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  StageOutput out;
  out.updated = multi_head_attention(tape, normed, groups, model.stage1, model.config().slope, 1, ids,
                                     &out.alphas);
  return out;
}

StageOutput attend_coarse_to_global(ad::Tape& tape, const RegionGraph& graph, const ad::Var& sources,
                                    const ad::Var& h_global, const std::vector<bool>& source_valid,
                                    GatModel& model) {
  const auto src_nodes = graph.sources_of(graph.global_index());
  if (sources.rows() != src_nodes.size())
    throw DimensionError("global attention: " + std::to_string(sources.rows()) + " source rows for " +
                         std::to_string(src_nodes.size()) + " graph sources");
  const std::size_t n = src_nodes.size();
  const std::vector<ad::Var> parts{sources, h_global};
  const ad::Var normed = stage_norm(tape, ad::concat_rows(parts), model.stage2, model.config().ln_eps);
  std::vector<std::size_t> group;
  for (std::size_t r = 0; r < n; ++r)
    if (source_valid.empty() || source_valid[r]) group.push_back(r);
  group.push_back(n);
  std::vector<std::size_t> ids(src_nodes.begin(), src_nodes.end());
  ids.push_back(graph.global_index());
  StageOutput out;
  const ad::Var attn = multi_head_attention(tape, normed, {group}, model.stage2, model.config().slope, 2,
                                            ids, &out.alphas);
  out.updated = ad::add(attn, h_global);
  return out;
}

GatOutputs gat_forward(ad::Tape& tape, const PooledVars& pooled, const RegionGraph& graph, GatModel& model) {
  const std::size_t F = graph.num_fine(), C = graph.num_coarse();
  if (pooled.fine.rows() != F)
    throw DimensionError("pooled features hold " + std::to_string(pooled.fine.rows()) +
                         " fine regions, graph has " + std::to_string(F));
  GatOutputs out;
  out.embeddings = embed_nodes(tape, pooled, model, C > 0);
  const NodeEmbeddings& h = out.embeddings;
  switch (graph.topology) {
    case Topology::hierarchical:
    case Topology::random: {
      StageOutput s1 = attend_fine_to_coarse(tape, graph, h, pooled.fine_valid, model);
      out.coarse_updated = s1.updated;
      std::vector<bool> cvalid = pooled.coarse_valid;
      StageOutput s2 = attend_coarse_to_global(tape, graph, s1.updated, h.global, cvalid, model);
      out.global_updated = s2.updated;
      out.alphas = std::move(s1.alphas);
      out.alphas.insert(out.alphas.end(), s2.alphas.begin(), s2.alphas.end());
      break;
    }
    case Topology::single_level: {
      StageOutput s2 = attend_coarse_to_global(tape, graph, h.fine, h.global, pooled.fine_valid, model);
      out.global_updated = s2.updated;
      out.alphas = std::move(s2.alphas);
      break;
    }
    case Topology::none:
      out.global_updated = h.global;
      if (C > 0) out.coarse_updated = h.coarse;
      break;
  }
  std::vector<ad::Var> rows{out.global_updated};
  if (C > 0) rows.push_back(out.coarse_updated);
  rows.push_back(h.fine);
  out.tokens = mlp_forward(tape, ad::concat_rows(rows), model.output_mlp);
  return out;
}

Tensor infer_tokens(const PooledFeatures& feats, const RegionGraph& graph, GatModel& model) {
  ad::Tape tape;
  const PooledVars pv = as_constants(tape, feats);
  return gat_forward(tape, pv, graph, model).tokens.value();
}

GatConfig gat_config_for(const PooledFeatures& feats) {
  GatConfig c;
  c.fine_in = feats.fine.total_channels();
  c.global_in = feats.global.grid.numel();
  return c;
}

}  // namespace ctgraph

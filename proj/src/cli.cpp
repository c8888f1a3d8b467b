#include "ctgraph/cli.hpp"

#include <omp.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"
#include "ctgraph/logging.hpp"
#include "ctgraph/pipeline.hpp"

namespace ctgraph {

namespace fs = std::filesystem;

namespace {

Extents parse_extents(const std::string& s) {
  Extents e;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> e.h >> x1 >> e.w >> x2 >> e.d) || x1 != 'x' || x2 != 'x' || !e.positive())
    throw ValidationError("extents '" + s + "' must look like 64x64x32");
  return e;
}

AnatomyHierarchy hierarchy_or_default(const std::string& path) {
  if (path.empty()) return default_hierarchy();
  require_file(path, "hierarchy");
  return AnatomyHierarchy::load(path);
}

std::map<std::string, nlohmann::json> read_jsonl_by_id(const fs::path& path) {
  require_file(path, "jsonl");
  std::ifstream in(path);
  std::map<std::string, nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
    if (!j.contains("id")) throw FormatError(path.string() + " line " + std::to_string(n) + ": missing id");
    const std::string id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    out[id] = std::move(j);
  }
  return out;
}

void configure_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv(kThreadsEnv)) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ValidationError(std::string(kThreadsEnv) + " must be an integer, got '" + env + "'");
      }
    }
  }
  if (threads > 0) omp_set_num_threads(threads);
  log_debug("cli", "threads", {{"max_threads", omp_get_max_threads()}});
}

struct SynthArgs {
  std::string spec, hierarchy, extents = "64x64x32", out;
  std::size_t count = 1;
  std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a) {
  const AnatomyHierarchy h = hierarchy_or_default(a.hierarchy);
  PhantomSpec spec;
  if (!a.spec.empty()) {
    require_file(a.spec, "phantom spec");
    spec = PhantomSpec::load(a.spec);
  } else {
    spec = default_phantom_spec(h, parse_extents(a.extents), a.seed);
  }
  fs::create_directories(a.out);
  spec.save(fs::path(a.out) / "spec.json");
  std::ofstream index(fs::path(a.out) / "samples.jsonl");
  for (std::size_t i = 0; i < a.count; ++i) {
    PhantomSpec s = spec;
    s.seed = sample_seed(a.seed, i);
    const Phantom ph = generate_phantom(s);
    char id[32];
    std::snprintf(id, sizeof id, "sample_%04zu", i);
    const fs::path dir = fs::path(a.out) / id;
    save_volume(dir / "volume.bin", ph.volume);
    save_mask(dir / "mask.bin", ph.mask);
    std::vector<int> labels(ph.targets.begin(), ph.targets.end());
    index << nlohmann::json{{"id", id},
                            {"volume", (fs::path(id) / "volume.bin").string()},
                            {"mask", (fs::path(id) / "mask.bin").string()},
                            {"labels", labels}}
                 .dump()
          << '\n';
  }
  log_info("synth", "wrote phantoms", {{"count", a.count}, {"out", a.out}});
}

struct EncodeArgs {
  std::string preset = "voco-style", presets, in, out;
  std::uint64_t seed = 0;
};

void cmd_encode(const EncodeArgs& a) {
  require_file(a.in, "volume");
  EncoderPreset preset;
  if (!a.presets.empty()) {
    require_file(a.presets, "preset registry");
    const auto reg = load_preset_registry(a.presets);
    preset = find_preset(a.preset, reg);
  } else {
    preset = find_preset(a.preset);
  }
  const FeaturePyramid p = synth_encode(load_volume(a.in), preset, a.seed);
  export_pyramid(p, a.out, preset.name);
  log_info("encode", "wrote pyramid", {{"layers", p.layers.size()}, {"channels", p.channel_list()}});
}

struct PoolArgs {
  std::string pyramid, mask, hierarchy, out;
};

void cmd_pool(const PoolArgs& a) {
  require_file(a.pyramid, "pyramid");
  require_file(a.mask, "mask");
  const AnatomyHierarchy h = hierarchy_or_default(a.hierarchy);
  const FeaturePyramid p = import_pyramid_dir(a.pyramid);
  const PooledFeatures f = pool_all(p, load_mask(a.mask), h);
  f.save(a.out);
  std::size_t empty = 0;
  for (bool v : f.fine.validity()) empty += !v;
  log_info("pool", "wrote pooled features",
           {{"fine", f.fine.regions()}, {"coarse", f.coarse.regions()}, {"empty_fine", empty}});
}

struct GraphArgs {
  std::string hierarchy, topology = "hierarchical", out;
  std::uint64_t seed = 0;
};

void cmd_graph(const GraphArgs& a) {
  const AnatomyHierarchy h = hierarchy_or_default(a.hierarchy);
  const RegionGraph g = build_graph(h, parse_topology(a.topology), a.seed);
  g.save(a.out);
  log_info("graph", "wrote graph", {{"nodes", g.nodes.size()}, {"edges", g.edges.size()}});
}

struct TrainArgs {
  std::string mode = "probe", manifest, config, out, features = "fine", graph;
};

void cmd_train(const TrainArgs& a) {
  require_file(a.manifest, "manifest");
  const auto entries = read_manifest(a.manifest);
  if (!a.config.empty()) require_file(a.config, "train config");
  nlohmann::json cj = a.config.empty() ? nlohmann::json::object() : read_json_file(a.config, "train config");
  cj["mode"] = a.mode;
  const TrainConfig cfg = TrainConfig::from_json(cj);
  std::vector<PooledFeatures> feats;
  Tensor y({entries.size(), entries.front().labels.size()}, 0.0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require_file(entries[i].features, "feature");
    feats.push_back(PooledFeatures::load(entries[i].features));
    if (entries[i].labels.size() != y.cols())
      throw ValidationError("manifest entry '" + entries[i].id + "' has a different label count");
    for (std::size_t k = 0; k < y.cols(); ++k) y.at(i, k) = entries[i].labels[k];
  }
  const auto split = manifest_split(entries);
  TrainResult result;
  if (cfg.mode == TrainMode::probe) {
    const auto spec = ProbeFeatureSpec::parse(cj.value("features", a.features));
    ProbeDataset pd;
    std::vector<double> flat;
    std::size_t d = 0;
    for (const auto& f : feats) {
      const auto v = probe_features(f, spec);
      d = v.size();
      flat.insert(flat.end(), v.begin(), v.end());
    }
    pd.x = Tensor({feats.size(), d}, std::move(flat));
    pd.y = y;
    pd.split = split;
    ProbeRun run = train_probe(pd, cfg);
    run.model.features = spec;
    run.model.save(a.out);
    result = run.result;
  } else {
    RegionGraph graph;
    if (!a.graph.empty()) {
      require_file(a.graph, "graph");
      graph = RegionGraph::load(a.graph);
    } else {
      graph = build_hierarchical(default_hierarchy());
    }
    GatConfig gc = cj.contains("gat") ? GatConfig::from_json(cj["gat"]) : GatConfig{};
    const GatConfig shape = gat_config_for(feats.front());
    gc.fine_in = shape.fine_in;
    gc.global_in = shape.global_in;
    GatDataset gd{std::move(feats), y, split};
    GatRun run = train_gat_classifier(gd, graph, gc, cfg);
    run.model.save(a.out);
    result = run.result;
  }
  nlohmann::json r = result.to_json();
  r["config"] = cfg.to_json();
  write_json_file(fs::path(a.out) / "train_metrics.json", r);
  log_info("train", "finished", {{"f1", result.final().f1}, {"epochs", result.trace.size()}});
}

struct InferArgs {
  std::string graph, feats, model, out, prompt = kDefaultPrompt;
};

void cmd_infer(const InferArgs& a) {
  require_file(a.graph, "graph");
  require_file(a.feats, "features");
  require_file(fs::path(a.model) / "config.json", "model config");
  const RegionGraph g = RegionGraph::load(a.graph);
  GatModel m = GatModel::load(a.model);
  const TokenExport t = export_tokens(infer_tokens(PooledFeatures::load(a.feats), g, m), g, a.prompt);
  t.save(a.out);
  log_info("infer", "wrote tokens", {{"rows", t.tokens.rows()}, {"cols", t.tokens.cols()}});
}

struct EvalArgs {
  std::string pred, ref, metrics = "ce,nlg", out;
};

void cmd_eval(const EvalArgs& a) {
  const auto pred = read_jsonl_by_id(a.pred);
  const auto ref = read_jsonl_by_id(a.ref);
  const bool ce = a.metrics.find("ce") != std::string::npos;
  const bool nlg = a.metrics.find("nlg") != std::string::npos;
  if (!ce && !nlg) throw ValidationError("--metrics must include ce and/or nlg");
  LabelMatrix lp, lr;
  std::vector<Tokens> cand, refs;
  for (const auto& [id, r] : ref) {
    const auto it = pred.find(id);
    if (it == pred.end()) throw ValidationError("prediction missing for id " + id);
    const auto& p = it->second;
    if (ce && r.contains("labels")) {
      lp.push_back(p.at("labels").get<std::vector<int>>());
      lr.push_back(r.at("labels").get<std::vector<int>>());
    }
    if (nlg && r.contains("text")) {
      cand.push_back(tokenize(p.at("text").get<std::string>()));
      refs.push_back(tokenize(r.at("text").get<std::string>()));
    }
  }
  nlohmann::json report;
  if (ce) {
    if (lr.empty()) throw ValidationError("ce metrics requested but no records carry labels");
    const PRF1 m = macro_prf1(lp, lr);
    report["ce"] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                    {"class_f1", m.class_f1}, {"degenerate_classes", m.degenerate}};
  }
  if (nlg) {
    if (refs.empty()) throw ValidationError("nlg metrics requested but no records carry text");
    const BleuResult b = bleu(cand, refs);
    const RougeResult r = rouge_l(cand, refs);
    report["nlg"] = {{"bleu", b.bleu}, {"brevity_penalty", b.brevity_penalty}, {"rouge_l", r.f},
                     {"warnings", b.warnings}, {"rouge_both_empty", r.both_empty}};
    for (const auto& w : b.warnings) log_warn("eval", w);
  }
  report["samples"] = ref.size();
  write_json_file(a.out, report);
  log_info("eval", "wrote report", {{"out", a.out}});
}

struct RunArgs {
  std::string config, out;
  long long seed = -1;
};

void cmd_run(const RunArgs& a) {
  require_file(a.config, "config");
  PipelineConfig cfg = PipelineConfig::load(a.config);
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  const auto summary = run_pipeline(cfg);
  std::cout << summary["metrics"].dump(2) << '\n';
}

int exit_code(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e))
    return 2;
  return 1;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"ct-graph: mask-guided pooling and hierarchical graph attention over 3D feature pyramids"};
  app.require_subcommand(1);
  int threads = 0;
  std::string log_level = "info";
  app.add_option("--threads", threads, std::string("Worker thread cap (default: $") + kThreadsEnv + " or all cores)");
  app.add_option("--log-level", log_level, "debug|info|warn|error|off")->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate phantom volumes, masks and targets");
  synth->add_option("--spec", sa.spec, "PhantomSpec JSON (default layout when omitted)");
  synth->add_option("--hierarchy", sa.hierarchy, "anatomy.json for the default layout");
  synth->add_option("--extents", sa.extents, "HxWxD for the default layout")->capture_default_str();
  synth->add_option("--count", sa.count, "Number of samples")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Base seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  EncodeArgs ea;
  auto* encode = app.add_subcommand("encode", "Synthetic multi-resolution encoder");
  encode->add_option("--preset", ea.preset, "Preset name")->capture_default_str();
  encode->add_option("--presets", ea.presets, "Preset registry JSON");
  encode->add_option("--seed", ea.seed, "Encoder seed")->capture_default_str();
  encode->add_option("--in", ea.in, "Volume container")->required();
  encode->add_option("--out", ea.out, "Pyramid directory")->required();

  PoolArgs pa;
  auto* pool = app.add_subcommand("pool", "Mask-guided pooling of a pyramid");
  pool->add_option("--pyramid", pa.pyramid, "Pyramid directory")->required();
  pool->add_option("--mask", pa.mask, "Label mask container")->required();
  pool->add_option("--hierarchy", pa.hierarchy, "anatomy.json (default table when omitted)");
  pool->add_option("--out", pa.out, "Pooled feature container")->required();

  GraphArgs ga;
  auto* graph = app.add_subcommand("graph", "Build the region graph");
  graph->add_option("--hierarchy", ga.hierarchy, "anatomy.json (default table when omitted)");
  graph->add_option("--topology", ga.topology, "hierarchical|random|single|none")->capture_default_str();
  graph->add_option("--seed", ga.seed, "Seed for the random topology")->capture_default_str();
  graph->add_option("--out", ga.out, "graph.json")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a linear probe or a graph classifier");
  train->add_option("--mode", ta.mode, "probe|gat")->capture_default_str();
  train->add_option("--manifest", ta.manifest, "JSONL manifest")->required();
  train->add_option("--config", ta.config, "train.json");
  train->add_option("--features", ta.features, "Probe input: global|coarse|fine|all[:layer][+global]")
      ->capture_default_str();
  train->add_option("--graph", ta.graph, "graph.json for gat mode (hierarchical default table when omitted)");
  train->add_option("--out", ta.out, "Checkpoint directory")->required();

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Export output tokens for one sample");
  infer->add_option("--graph", ia.graph, "graph.json")->required();
  infer->add_option("--feats", ia.feats, "Pooled feature container")->required();
  infer->add_option("--model", ia.model, "Checkpoint directory")->required();
  infer->add_option("--prompt", ia.prompt, "Prompt stored with the tokens");
  infer->add_option("--out", ia.out, "Token container")->required();

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Macro P/R/F1 and BLEU/ROUGE-L");
  eval->add_option("--pred", va.pred, "Predictions JSONL")->required();
  eval->add_option("--ref", va.ref, "References JSONL")->required();
  eval->add_option("--metrics", va.metrics, "ce,nlg")->capture_default_str();
  eval->add_option("--out", va.out, "report.json")->required();

  RunArgs ra;
  auto* run = app.add_subcommand("run", "Whole pipeline from one config");
  run->add_option("--config", ra.config, "Pipeline config JSON")->required();
  run->add_option("--out", ra.out, "Override the output directory");
  run->add_option("--seed", ra.seed, "Override the seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string stage = "cli";
  try {
    Logger::instance().set_level(parse_log_level(log_level));
    configure_threads(threads);
    if (*synth) stage = "synth", cmd_synth(sa);
    else if (*encode) stage = "encode", cmd_encode(ea);
    else if (*pool) stage = "pool", cmd_pool(pa);
    else if (*graph) stage = "graph", cmd_graph(ga);
    else if (*train) stage = "train", cmd_train(ta);
    else if (*infer) stage = "infer", cmd_infer(ia);
    else if (*eval) stage = "eval", cmd_eval(va);
    else if (*run) stage = "run", cmd_run(ra);
  } catch (const std::exception& e) {
    const int code = exit_code(e);
    log_error(stage, e.what(), {{"exit_code", code}});
    std::cerr << "ct-graph " << stage << ": " << e.what() << '\n';
    return code;
  }
  return 0;
}

}  // namespace ctgraph

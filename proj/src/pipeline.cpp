#include "ctgraph/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"
#include "ctgraph/logging.hpp"

namespace ctgraph {

namespace fs = std::filesystem;

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw ValidationError(what + " file not found: " + path.string());
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() ? base / path : path;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e))
    return 2;
  return 1;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    if (j.contains("out")) c.out_dir = resolve(base_dir, j.at("out").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.preset = j.value("preset", c.preset);
    if (j.contains("presets")) c.preset_registry = resolve(base_dir, j.at("presets").get<std::string>());
    if (j.contains("hierarchy")) c.hierarchy = resolve(base_dir, j.at("hierarchy").get<std::string>());
    if (j.contains("topology")) c.topology = parse_topology(j.at("topology").get<std::string>());
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.samples = d.value("samples", c.samples);
      if (d.contains("extents")) {
        const auto e = d.at("extents").get<std::vector<std::size_t>>();
        if (e.size() != 3) throw ValidationError("data.extents must list H, W, D");
        c.extents = {e[0], e[1], e[2]};
      }
      if (d.contains("phantom_spec")) c.phantom_spec = resolve(base_dir, d.at("phantom_spec").get<std::string>());
    }
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      c.probe_features = p.value("features", c.probe_features);
      if (p.contains("train")) {
        auto t = p.at("train");
        t["mode"] = "probe";
        c.probe_train = TrainConfig::from_json(t);
      }
    }
    if (j.contains("gat")) {
      const auto& g = j.at("gat");
      c.train_gat = g.value("enabled", c.train_gat);
      if (g.contains("model")) c.gat_model = GatConfig::from_json(g.at("model"));
      if (g.contains("train")) {
        auto t = g.at("train");
        t["mode"] = "gat";
        c.gat_train = TrainConfig::from_json(t);
      }
    }
    if (j.contains("tokens")) {
      c.export_tokens = j.at("tokens").value("export", c.export_tokens);
      c.prompt = j.at("tokens").value("prompt", c.prompt);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("pipeline config: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  require_file(path, "config");
  return from_json(read_json_file(path, "pipeline config"), path.parent_path());
}

nlohmann::json PipelineConfig::to_json() const {
  auto abs = [](const fs::path& p) { return fs::absolute(p).lexically_normal().string(); };
  nlohmann::json j{{"out", abs(out_dir)},
                   {"seed", seed},
                   {"preset", preset},
                   {"topology", to_string(topology)},
                   {"data", {{"samples", samples}, {"extents", {extents.h, extents.w, extents.d}}}},
                   {"probe", {{"features", probe_features}, {"train", probe_train.to_json()}}},
                   {"gat", {{"enabled", train_gat}, {"model", gat_model.to_json()}, {"train", gat_train.to_json()}}},
                   {"tokens", {{"export", export_tokens}, {"prompt", prompt}}}};
  if (preset_registry) j["presets"] = abs(*preset_registry);
  if (hierarchy) j["hierarchy"] = abs(*hierarchy);
  if (phantom_spec) j["data"]["phantom_spec"] = abs(*phantom_spec);
  return j;
}

void PipelineConfig::validate() const {
  if (hierarchy) require_file(*hierarchy, "hierarchy");
  if (preset_registry) require_file(*preset_registry, "preset registry");
  if (phantom_spec) require_file(*phantom_spec, "phantom spec");
  if (samples < 2) throw ValidationError("pipeline needs at least 2 samples for a train/val split");
  if (!extents.positive()) throw ValidationError("data.extents must be positive");
  for (const auto& f : probe_features) ProbeFeatureSpec::parse(f);
  probe_train.validate();
  gat_train.validate();
}

AnatomyHierarchy PipelineConfig::load_hierarchy() const {
  return hierarchy ? AnatomyHierarchy::load(*hierarchy) : default_hierarchy();
}

EncoderPreset PipelineConfig::load_preset() const {
  if (preset_registry) {
    const auto reg = load_preset_registry(*preset_registry);
    return find_preset(preset, reg);
  }
  return find_preset(preset);
}

PhantomSpec PipelineConfig::phantom_template(const AnatomyHierarchy& h) const {
  return phantom_spec ? PhantomSpec::load(*phantom_spec) : default_phantom_spec(h, extents, seed);
}

PhantomDataset build_dataset(const PipelineConfig& cfg, std::uint64_t seed) {
  PhantomDataset ds;
  ds.hierarchy = cfg.load_hierarchy();
  const EncoderPreset preset = cfg.load_preset();
  PhantomSpec spec = cfg.phantom_template(ds.hierarchy);
  for (const auto& p : spec.pathologies) ds.pathology_names.push_back(p.name);
  const std::size_t P = spec.pathologies.size();
  if (P == 0) throw ValidationError("phantom spec has no pathologies to classify");
  ds.targets = Tensor({cfg.samples, P}, 0.0);
  const std::uint64_t encoder_seed = mix_seed(seed, 0xec0de);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    spec.seed = sample_seed(seed, i);
    const Phantom ph = generate_phantom(spec);
    const FeaturePyramid pyr = synth_encode(ph.volume, preset, encoder_seed);
    ds.features.push_back(pool_all(pyr, ph.mask, ds.hierarchy));
    for (std::size_t k = 0; k < P; ++k) ds.targets.at(i, k) = ph.targets[k];
    char id[32];
    std::snprintf(id, sizeof id, "sample_%04zu", i);
    ds.ids.emplace_back(id);
  }
  return ds;
}

ProbeDataset probe_dataset(const PhantomDataset& data, const ProbeFeatureSpec& spec) {
  ProbeDataset pd;
  std::vector<double> flat;
  std::size_t d = 0;
  for (const auto& f : data.features) {
    const auto v = probe_features(f, spec);
    d = v.size();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  pd.x = Tensor({data.features.size(), d}, std::move(flat));
  pd.y = data.targets;
  return pd;
}

GatDataset gat_dataset(const PhantomDataset& data) {
  GatDataset gd;
  gd.features = data.features;
  gd.y = data.targets;
  return gd;
}

namespace {

nlohmann::json metrics_json(const EpochMetrics& e) {
  return {{"precision", e.precision}, {"recall", e.recall}, {"f1", e.f1}, {"val_loss", e.val_loss}};
}

class Run {
 public:
  explicit Run(const PipelineConfig& cfg) : cfg_(cfg) {}

  template <class Fn>
  void stage(const std::string& name, Fn&& fn) {
    log_info(name, "start");
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      fail(name, e);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stages_.push_back({{"name", name}, {"seconds", secs}, {"status", "ok"}});
    log_info(name, "done", {{"seconds", secs}});
  }

  void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }

  nlohmann::json summary(const nlohmann::json& metrics) const {
    return {{"status", "ok"}, {"config", cfg_.to_json()}, {"stages", stages_}, {"metrics", metrics},
            {"artifacts", artifacts_}};
  }

 private:
  [[noreturn]] void fail(const std::string& name, const std::exception& e) {
    log_error(name, e.what());
    nlohmann::json stale{{"failed_stage", name}, {"error", e.what()}, {"artifacts", artifacts_}};
    try {
      write_json_file(cfg_.out_dir / "STALE", stale);
      nlohmann::json s{{"status", "failed"}, {"failed_stage", name}, {"error", e.what()},
                       {"config", cfg_.to_json()}, {"stages", stages_}};
      write_json_file(cfg_.out_dir / "summary.json", s);
    } catch (const std::exception& inner) {
      log_error(name, "could not record failure", {{"error", inner.what()}});
    }
    throw StageError(name, e.what(), exit_code_for(e));
  }

  const PipelineConfig& cfg_;
  nlohmann::json stages_ = nlohmann::json::array();
  std::vector<std::string> artifacts_;
};

}  // namespace

nlohmann::json run_pipeline(const PipelineConfig& cfg) {
  Run run(cfg);
  PhantomDataset data;
  RegionGraph graph;
  nlohmann::json metrics;
  std::optional<GatClassifier> classifier;
  Split split;

  run.stage("config", [&] {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    fs::remove(cfg.out_dir / "STALE");
  });
  run.stage("synth+encode+pool", [&] {
    data = build_dataset(cfg, cfg.seed);
    split = make_split(cfg.samples, cfg.probe_train.val_fraction, cfg.seed);
    std::vector<ManifestEntry> manifest;
    std::vector<bool> is_val(cfg.samples, false);
    for (auto v : split.val) is_val[v] = true;
    for (std::size_t i = 0; i < data.features.size(); ++i) {
      const fs::path p = cfg.out_dir / "features" / (data.ids[i] + ".bin");
      data.features[i].save(p);
      run.artifact(p);
      ManifestEntry e{data.ids[i], fs::path("features") / (data.ids[i] + ".bin"), {}, is_val[i] ? "val" : "train"};
      for (std::size_t k = 0; k < data.targets.cols(); ++k) e.labels.push_back(static_cast<int>(data.targets.at(i, k)));
      manifest.push_back(std::move(e));
    }
    write_manifest(cfg.out_dir / "manifest.jsonl", manifest);
    run.artifact(cfg.out_dir / "manifest.jsonl");
    std::vector<double> prevalence(data.targets.cols(), 0.0);
    for (std::size_t i = 0; i < data.targets.rows(); ++i)
      for (std::size_t k = 0; k < data.targets.cols(); ++k) prevalence[k] += data.targets.at(i, k);
    metrics["dataset"] = {{"samples", cfg.samples}, {"pathologies", data.pathology_names},
                          {"positives", prevalence}, {"train", split.train.size()}, {"val", split.val.size()}};
  });
  run.stage("graph", [&] {
    graph = build_graph(data.hierarchy, cfg.topology, cfg.seed);
    graph.save(cfg.out_dir / "graph.json");
    run.artifact(cfg.out_dir / "graph.json");
  });
  run.stage("train", [&] {
    for (const auto& name : cfg.probe_features) {
      const auto spec = ProbeFeatureSpec::parse(name);
      ProbeDataset pd = probe_dataset(data, spec);
      pd.split = split;
      ProbeRun pr = train_probe(pd, cfg.probe_train);
      pr.model.features = spec;
      const fs::path dir = cfg.out_dir / "probe" / spec.str();
      pr.model.save(dir);
      run.artifact(dir);
      auto m = metrics_json(pr.result.final());
      m["degenerate_classes"] = pr.result.degenerate_classes;
      metrics["probe"][spec.str()] = m;
    }
    if (cfg.train_gat) {
      GatDataset gd = gat_dataset(data);
      gd.split = split;
      GatConfig gc = cfg.gat_model;
      const GatConfig shape = gat_config_for(data.features.front());
      gc.fine_in = shape.fine_in;
      gc.global_in = shape.global_in;
      GatRun gr = train_gat_classifier(gd, graph, gc, cfg.gat_train);
      gr.model.save(cfg.out_dir / "gat");
      run.artifact(cfg.out_dir / "gat");
      auto m = metrics_json(gr.result.final());
      m["degenerate_classes"] = gr.result.degenerate_classes;
      m["topology"] = to_string(cfg.topology);
      metrics["gat"] = m;
      classifier = std::move(gr.model);
    }
  });
  run.stage("infer", [&] {
    if (!cfg.export_tokens) return;
    GatModel untrained;
    GatModel* model = nullptr;
    if (classifier) {
      model = &classifier->gat;
    } else {
      GatConfig gc = cfg.gat_model;
      const GatConfig shape = gat_config_for(data.features.front());
      gc.fine_in = shape.fine_in;
      gc.global_in = shape.global_in;
      gc.seed = cfg.seed;
      untrained = GatModel::init(gc);
      model = &untrained;
    }
    for (std::size_t i = 0; i < data.features.size(); ++i) {
      const TokenExport t = export_tokens(infer_tokens(data.features[i], graph, *model), graph, cfg.prompt);
      const fs::path p = cfg.out_dir / "tokens" / (data.ids[i] + ".bin");
      t.save(p);
      run.artifact(p);
      if (i == 0) metrics["tokens"] = {{"rows", t.tokens.rows()}, {"cols", t.tokens.cols()}};
    }
  });
  run.stage("eval", [&] {
    if (!classifier) return;
    LabelMatrix pred, ref;
    for (auto v : split.val) {
      const Tensor z = classifier->logits(data.features[v], graph);
      std::vector<int> p, r;
      for (std::size_t k = 0; k < z.numel(); ++k) {
        p.push_back(1.0 / (1.0 + std::exp(-z[k])) > classifier->threshold);
        r.push_back(static_cast<int>(data.targets.at(v, k)));
      }
      pred.push_back(p);
      ref.push_back(r);
    }
    const PRF1 m = macro_prf1(pred, ref);
    metrics["ce"] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
  });

  const nlohmann::json summary = run.summary(metrics);
  write_json_file(cfg.out_dir / "summary.json", summary);
  log_info("run", "summary written", {{"path", (cfg.out_dir / "summary.json").string()}});
  return summary;
}

}  // namespace ctgraph

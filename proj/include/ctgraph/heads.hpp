#pragma once

// Task heads: linear probe on frozen pooled features, a graph classifier on
// the global output token, token export, and their training loops.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctgraph/gat.hpp"
#include "ctgraph/metrics.hpp"
#include "ctgraph/nn.hpp"
#include "ctgraph/pooling.hpp"

namespace ctgraph {

inline constexpr const char* kDefaultPrompt =
    "Generate a medical report based on the visual information of the given CT image.";

enum class TrainMode { probe, gat };
std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::probe;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  double val_fraction = 0.1;
  bool standardize = true;  // probe only: z-score features with train statistics
  // gat only: z-score pooled inputs per (region, channel), per channel, or not at all.
  std::string gat_input_norm = "region";

  static TrainConfig defaults(TrainMode mode);
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys take the defaults of the mode named in j (probe if absent).
  static TrainConfig from_json(const nlohmann::json& j);
};

// Which pooled features feed the probe.
//   level: global (whole-map average), coarse, fine, or all (coarse + fine)
//   layer: 0 for the fused vector, l >= 1 for that layer alone
//   include_global: append the global average to coarse/fine/all inputs
struct ProbeFeatureSpec {
  enum class Level { global, coarse, fine, all };
  Level level = Level::fine;
  std::size_t layer = 0;
  bool include_global = false;

  std::string str() const;
  // "fine", "coarse:2", "all+global", "global:3", ...
  static ProbeFeatureSpec parse(const std::string& s);
};

std::vector<double> probe_features(const PooledFeatures& f, const ProbeFeatureSpec& spec);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
// Seeded permutation; the first round(val_fraction * n) indices (at least 1)
// go to validation. A single sample is used for both.
Split make_split(std::size_t n, double val_fraction, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> trace;
  std::vector<std::size_t> degenerate_classes;  // never positive in validation
  double first_batch_loss = 0.0;
  const EpochMetrics& final() const { return trace.back(); }
  nlohmann::json to_json() const;
};

struct ProbeModel {
  Linear layer;  // in x n_classes
  std::vector<double> mean, inv_std;
  double threshold = 0.5;
  ProbeFeatureSpec features;

  std::size_t in_dim() const { return layer.in_dim(); }
  std::size_t classes() const { return layer.out_dim(); }
  // Zero weights and bias.
  static ProbeModel zeros(std::size_t in, std::size_t classes);
  Tensor logits(const Tensor& x) const;  // n x in -> n x classes
  LabelMatrix predict(const Tensor& x) const;
  void save(const std::filesystem::path& dir) const;
  static ProbeModel load(const std::filesystem::path& dir);
};

struct ProbeDataset {
  Tensor x;  // n x d
  Tensor y;  // n x classes, 0/1
  std::optional<Split> split;
  std::size_t size() const { return x.rows(); }
};

struct ProbeRun {
  ProbeModel model;
  TrainResult result;
};

ProbeRun train_probe(const ProbeDataset& data, const TrainConfig& cfg);

// Affine standardization of pooled inputs, fitted on training samples.
struct InputNorm {
  std::string mode = "none";  // none | channel | region
  Tensor fine_mean, fine_scale;      // F x C_total
  Tensor coarse_mean, coarse_scale;  // C x C_total
  Tensor global_mean, global_scale;  // 1 x 32*C_L

  static InputNorm fit(const std::string& mode, const std::vector<PooledFeatures>& feats,
                       std::span<const std::size_t> rows);
  PooledFeatures apply(const PooledFeatures& f) const;
};

struct GatClassifier {
  GatModel gat;
  Linear head;  // export_dim x n_classes, applied to the global token
  double threshold = 0.5;
  InputNorm norm;

  static GatClassifier init(const GatConfig& cfg, std::size_t classes);
  std::vector<Parameter*> parameters();
  // 1 x classes logits for one sample.
  ad::Var logits(ad::Tape& tape, const PooledVars& pooled, const RegionGraph& graph);
  Tensor logits(const PooledFeatures& feats, const RegionGraph& graph);
  void save(const std::filesystem::path& dir) const;
  static GatClassifier load(const std::filesystem::path& dir);
};

struct GatDataset {
  std::vector<PooledFeatures> features;
  Tensor y;  // n x classes
  std::optional<Split> split;
  std::size_t size() const { return features.size(); }
};

struct GatRun {
  GatClassifier model;
  TrainResult result;
};

GatRun train_gat_classifier(const GatDataset& data, const RegionGraph& graph, const GatConfig& gat_cfg,
                            const TrainConfig& cfg);

// Mean BCE over `samples` plus the gradient of that loss wrt every classifier
// parameter (left in Parameter::grad).
double gat_batch_loss(GatClassifier& model, const GatDataset& data, const RegionGraph& graph,
                      std::span<const std::size_t> samples);

struct TokenExport {
  Tensor tokens;  // n_tokens x export_dim: global, coarse by id, fine by id
  std::string prompt = kDefaultPrompt;
  std::vector<std::string> node_names;

  void save(const std::filesystem::path& path) const;
  static TokenExport load(const std::filesystem::path& path);
};

TokenExport export_tokens(const Tensor& tokens, const RegionGraph& graph, std::string prompt = kDefaultPrompt);

// JSONL manifest: {"id", "features", "labels": [0/1...], "split": "train"|"val"}.
// Relative feature paths resolve against the manifest's directory.
struct ManifestEntry {
  std::string id;
  std::filesystem::path features;
  std::vector<int> labels;
  std::string split;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
// Uses the entries' split fields when every entry has one.
std::optional<Split> manifest_split(const std::vector<ManifestEntry>& entries);

}  // namespace ctgraph

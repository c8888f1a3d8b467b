#pragma once

// End-to-end run: synth -> encode -> pool -> graph -> train -> infer -> eval,
// driven by one JSON config and summarized in summary.json.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctgraph/encoder.hpp"
#include "ctgraph/gat.hpp"
#include "ctgraph/graph.hpp"
#include "ctgraph/heads.hpp"
#include "ctgraph/phantom.hpp"
#include "ctgraph/pooling.hpp"

namespace ctgraph {

// A failed pipeline stage; `exit_code` follows the CLI convention.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause, int exit_code)
      : std::runtime_error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)), code_(exit_code) {}
  const std::string& stage() const { return stage_; }
  int exit_code() const { return code_; }

 private:
  std::string stage_;
  int code_;
};

// Throws ValidationError naming `what` and the path when it does not exist.
void require_file(const std::filesystem::path& path, const std::string& what);

struct PipelineConfig {
  std::filesystem::path out_dir = "ct_graph_out";
  std::uint64_t seed = 0;
  std::string preset = "voco-style";
  std::optional<std::filesystem::path> preset_registry;
  std::optional<std::filesystem::path> hierarchy;  // default table when unset
  std::optional<std::filesystem::path> phantom_spec;
  Extents extents{128, 128, 64};
  std::size_t samples = 16;
  Topology topology = Topology::hierarchical;

  std::vector<std::string> probe_features{"fine", "coarse", "global", "all"};
  TrainConfig probe_train = TrainConfig::defaults(TrainMode::probe);
  bool train_gat = true;
  GatConfig gat_model;  // fine_in / global_in are filled from the data
  TrainConfig gat_train = TrainConfig::defaults(TrainMode::gat);
  bool export_tokens = true;
  std::string prompt = kDefaultPrompt;

  // Relative paths resolve against base_dir (the config file's directory).
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;

  AnatomyHierarchy load_hierarchy() const;
  EncoderPreset load_preset() const;
  PhantomSpec phantom_template(const AnatomyHierarchy& h) const;
};

struct PhantomDataset {
  AnatomyHierarchy hierarchy;
  std::vector<PooledFeatures> features;
  Tensor targets;  // samples x pathologies
  std::vector<std::string> pathology_names;
  std::vector<std::string> ids;
};

// Generates cfg.samples phantoms from `seed`, encodes and pools each in memory.
PhantomDataset build_dataset(const PipelineConfig& cfg, std::uint64_t seed);

ProbeDataset probe_dataset(const PhantomDataset& data, const ProbeFeatureSpec& spec);
GatDataset gat_dataset(const PhantomDataset& data);

// Runs every stage, writes artifacts under cfg.out_dir and returns the
// summary that was written to summary.json. On failure a STALE marker lists
// the artifacts written so far and a StageError is thrown.
nlohmann::json run_pipeline(const PipelineConfig& cfg);

}  // namespace ctgraph

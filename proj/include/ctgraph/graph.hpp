#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ctgraph {

struct FineRegion {
  int id = 0;
  std::string name;
  std::int32_t label = 0;  // mask label pooled for this node
  int parent = 0;          // coarse id
  friend bool operator==(const FineRegion&, const FineRegion&) = default;
};

struct CoarseRegion {
  int id = 0;
  std::string name;
  // Own mask label, used by childless systems (esophagus-like) and unioned
  // with the children's labels otherwise.
  std::optional<std::int32_t> label;
  std::vector<int> children;  // fine ids, ascending
  friend bool operator==(const CoarseRegion&, const CoarseRegion&) = default;
};

// Fine regions sorted by id, coarse regions sorted by id.
class AnatomyHierarchy {
 public:
  AnatomyHierarchy() = default;
  // Builds child lists from the fine parent fields and validates.
  AnatomyHierarchy(std::vector<FineRegion> fine, std::vector<CoarseRegion> coarse,
                   std::string version = "1");

  const std::vector<FineRegion>& fine() const { return fine_; }
  const std::vector<CoarseRegion>& coarse() const { return coarse_; }
  const std::string& version() const { return version_; }
  std::size_t coarse_position(int coarse_id) const;
  std::int32_t max_label() const;
  // Labels pooled together for coarse node at position c.
  std::vector<std::int32_t> coarse_labels(std::size_t c) const;

  nlohmann::json to_json() const;
  static AnatomyHierarchy from_json(const nlohmann::json& j);
  static AnatomyHierarchy load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const AnatomyHierarchy&, const AnatomyHierarchy&) = default;

 private:
  std::vector<FineRegion> fine_;
  std::vector<CoarseRegion> coarse_;
  std::string version_ = "1";
};

// Reconstructed 34-fine / 8-coarse chest CT table (bones, lungs, abdomen,
// mediastinum, heart, esophagus, trachea, thyroid). Not an official list.
const AnatomyHierarchy& default_hierarchy();

enum class NodeLevel { fine, coarse, global };
enum class Topology { hierarchical, random, single_level, none };

std::string to_string(NodeLevel l);
std::string to_string(Topology t);
Topology parse_topology(const std::string& s);

struct GraphNode {
  NodeLevel level = NodeLevel::fine;
  int ref_id = 0;  // fine or coarse id; -1 for the global node
  std::string name;
  friend bool operator==(const GraphNode&, const GraphNode&) = default;
};

using Edge = std::pair<std::size_t, std::size_t>;  // (source, target) node indices

// Node order: fine (by id), coarse (by id, absent for single-level), global.
struct RegionGraph {
  Topology topology = Topology::hierarchical;
  std::vector<GraphNode> nodes;
  std::vector<Edge> edges;
  AnatomyHierarchy hierarchy;
  std::uint64_t seed = 0;  // only meaningful for the random topology

  std::size_t num_fine() const;
  std::size_t num_coarse() const;
  std::size_t global_index() const { return nodes.size() - 1; }
  std::vector<std::size_t> sources_of(std::size_t target) const;
  void validate() const;

  nlohmann::json to_json() const;
  static RegionGraph from_json(const nlohmann::json& j);
  static RegionGraph load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const RegionGraph&, const RegionGraph&) = default;
};

// E_fc: every fine region to its parent; E_cg: every coarse region to global.
RegionGraph build_hierarchical(const AnatomyHierarchy& h);
// Same node set and edge count; each fine region gets a uniformly drawn coarse parent.
RegionGraph build_random(const AnatomyHierarchy& h, std::uint64_t seed);
// Fine regions connect straight to the global node; no coarse level.
RegionGraph build_single_level(const AnatomyHierarchy& h);
RegionGraph build_graph(const AnatomyHierarchy& h, Topology t, std::uint64_t seed = 0);

}  // namespace ctgraph

#include "ctgraph/graph.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"

namespace ctgraph {

AnatomyHierarchy::AnatomyHierarchy(std::vector<FineRegion> fine, std::vector<CoarseRegion> coarse,
                                   std::string version)
    : fine_(std::move(fine)), coarse_(std::move(coarse)), version_(std::move(version)) {
  if (fine_.empty() && coarse_.empty()) throw ValidationError("hierarchy has no regions");
  std::sort(fine_.begin(), fine_.end(), [](auto& a, auto& b) { return a.id < b.id; });
  std::sort(coarse_.begin(), coarse_.end(), [](auto& a, auto& b) { return a.id < b.id; });

  std::set<int> coarse_ids;
  for (const auto& c : coarse_)
    if (!coarse_ids.insert(c.id).second)
      throw ValidationError("duplicate coarse id " + std::to_string(c.id));

  // A fine id appearing twice would give it two parents.
  for (std::size_t i = 1; i < fine_.size(); ++i)
    if (fine_[i].id == fine_[i - 1].id)
      throw ValidationError("fine region " + std::to_string(fine_[i].id) +
                            " is listed more than once (duplicate parent)");

  // Children listed explicitly on coarse entries must agree with the parents.
  std::map<int, int> listed_parent;
  for (const auto& c : coarse_)
    for (int child : c.children) {
      auto [it, fresh] = listed_parent.emplace(child, c.id);
      if (!fresh)
        throw ValidationError("fine region " + std::to_string(child) + " has duplicate parents " +
                              std::to_string(it->second) + " and " + std::to_string(c.id));
    }
  for (const auto& f : fine_) {
    if (!coarse_ids.count(f.parent))
      throw ValidationError("orphan fine region " + std::to_string(f.id) + " ('" + f.name +
                            "'): parent " + std::to_string(f.parent) + " does not exist");
    auto it = listed_parent.find(f.id);
    if (it != listed_parent.end() && it->second != f.parent)
      throw ValidationError("fine region " + std::to_string(f.id) + " has duplicate parents " +
                            std::to_string(f.parent) + " and " + std::to_string(it->second));
  }
  for (const auto& [child, parent] : listed_parent) {
    (void)parent;
    if (std::none_of(fine_.begin(), fine_.end(), [&](auto& f) { return f.id == child; }))
      throw ValidationError("coarse child " + std::to_string(child) + " is not a fine region");
  }

  std::set<std::int32_t> labels;
  auto claim = [&](std::int32_t l, const std::string& who) {
    if (l <= 0) throw ValidationError(who + " has non-positive mask label " + std::to_string(l));
    if (!labels.insert(l).second)
      throw ValidationError("mask label " + std::to_string(l) + " used twice (" + who + ")");
  };
  for (const auto& f : fine_) claim(f.label, "fine region '" + f.name + "'");
  for (const auto& c : coarse_)
    if (c.label) claim(*c.label, "coarse region '" + c.name + "'");

  for (auto& c : coarse_) {
    c.children.clear();
    for (const auto& f : fine_)
      if (f.parent == c.id) c.children.push_back(f.id);
  }
}

std::size_t AnatomyHierarchy::coarse_position(int coarse_id) const {
  for (std::size_t i = 0; i < coarse_.size(); ++i)
    if (coarse_[i].id == coarse_id) return i;
  throw ValidationError("no coarse region with id " + std::to_string(coarse_id));
}

std::int32_t AnatomyHierarchy::max_label() const {
  std::int32_t m = 0;
  for (const auto& f : fine_) m = std::max(m, f.label);
  for (const auto& c : coarse_)
    if (c.label) m = std::max(m, *c.label);
  return m;
}

std::vector<std::int32_t> AnatomyHierarchy::coarse_labels(std::size_t c) const {
  const auto& node = coarse_.at(c);
  std::vector<std::int32_t> out;
  if (node.label) out.push_back(*node.label);
  for (int child : node.children)
    for (const auto& f : fine_)
      if (f.id == child) out.push_back(f.label);
  return out;
}

nlohmann::json AnatomyHierarchy::to_json() const {
  nlohmann::json j;
  j["version"] = version_;
  j["fine"] = nlohmann::json::array();
  for (const auto& f : fine_)
    j["fine"].push_back({{"id", f.id}, {"name", f.name}, {"label", f.label}, {"parent", f.parent}});
  j["coarse"] = nlohmann::json::array();
  for (const auto& c : coarse_) {
    nlohmann::json e{{"id", c.id}, {"name", c.name}};
    if (c.label) e["label"] = *c.label;
    j["coarse"].push_back(e);
  }
  return j;
}

AnatomyHierarchy AnatomyHierarchy::from_json(const nlohmann::json& j) {
  try {
    std::vector<FineRegion> fine;
    for (const auto& e : j.at("fine"))
      fine.push_back({e.at("id").get<int>(), e.at("name").get<std::string>(),
                      e.at("label").get<std::int32_t>(), e.at("parent").get<int>()});
    std::vector<CoarseRegion> coarse;
    for (const auto& e : j.at("coarse")) {
      CoarseRegion c{e.at("id").get<int>(), e.at("name").get<std::string>(), std::nullopt, {}};
      if (e.contains("label")) c.label = e["label"].get<std::int32_t>();
      coarse.push_back(std::move(c));
    }
    std::string version = "1";
    if (j.contains("version"))
      version = j["version"].is_string() ? j["version"].get<std::string>() : j["version"].dump();
    return AnatomyHierarchy(std::move(fine), std::move(coarse), std::move(version));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed anatomy hierarchy: ") + e.what());
  }
}


AnatomyHierarchy AnatomyHierarchy::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path, "hierarchy"));
}

void AnatomyHierarchy::save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

const AnatomyHierarchy& default_hierarchy() {
  static const AnatomyHierarchy h = [] {
    const std::vector<CoarseRegion> coarse = {
        {0, "bones", std::nullopt, {}},       {1, "lungs", std::nullopt, {}},
        {2, "abdomen", std::nullopt, {}},     {3, "mediastinum", std::nullopt, {}},
        {4, "heart", std::nullopt, {}},       {5, "esophagus", 35, {}},
        {6, "trachea", 36, {}},               {7, "thyroid", 37, {}},
    };
    const std::vector<std::pair<const char*, int>> table = {
        {"vertebrae", 0},
        {"ribs_left", 0},
        {"ribs_right", 0},
        {"sternum", 0},
        {"scapula_left", 0},
        {"scapula_right", 0},
        {"clavicle_left", 0},
        {"clavicle_right", 0},
        {"lung_upper_lobe_left", 1},
        {"lung_lower_lobe_left", 1},
        {"lung_upper_lobe_right", 1},
        {"lung_middle_lobe_right", 1},
        {"lung_lower_lobe_right", 1},
        {"liver", 2},
        {"spleen", 2},
        {"stomach", 2},
        {"pancreas", 2},
        {"gallbladder", 2},
        {"kidney_left", 2},
        {"kidney_right", 2},
        {"adrenal_gland_left", 2},
        {"adrenal_gland_right", 2},
        {"small_bowel", 2},
        {"colon", 2},
        {"duodenum", 2},
        {"aorta", 3},
        {"pulmonary_artery", 3},
        {"superior_vena_cava", 3},
        {"lymph_node_station", 3},
        {"heart", 4},
        {"heart_atrium_left", 4},
        {"heart_atrium_right", 4},
        {"heart_ventricle_left", 4},
        {"heart_ventricle_right", 4},
    };
    std::vector<FineRegion> fine;
    for (std::size_t i = 0; i < table.size(); ++i)
      fine.push_back({static_cast<int>(i), table[i].first, static_cast<std::int32_t>(i + 1),
                      table[i].second});
    return AnatomyHierarchy(std::move(fine), coarse, "1");
  }();
  return h;
}

std::string to_string(NodeLevel l) {
  switch (l) {
    case NodeLevel::fine: return "fine";
    case NodeLevel::coarse: return "coarse";
    case NodeLevel::global: return "global";
  }
  return "?";
}

std::string to_string(Topology t) {
  switch (t) {
    case Topology::hierarchical: return "hierarchical";
    case Topology::random: return "random";
    case Topology::single_level: return "single";
    case Topology::none: return "none";
  }
  return "?";
}

Topology parse_topology(const std::string& s) {
  if (s == "hierarchical") return Topology::hierarchical;
  if (s == "random") return Topology::random;
  if (s == "single" || s == "single-level" || s == "single_level") return Topology::single_level;
  if (s == "none") return Topology::none;
  throw ValidationError("unknown topology '" + s + "' (expected hierarchical|random|single|none)");
}

namespace {

NodeLevel parse_level(const std::string& s) {
  if (s == "fine") return NodeLevel::fine;
  if (s == "coarse") return NodeLevel::coarse;
  if (s == "global") return NodeLevel::global;
  throw FormatError("unknown node level '" + s + "'");
}

RegionGraph skeleton(const AnatomyHierarchy& h, Topology t, bool with_coarse) {
  RegionGraph g;
  g.topology = t;
  g.hierarchy = h;
  for (const auto& f : h.fine()) g.nodes.push_back({NodeLevel::fine, f.id, f.name});
  if (with_coarse)
    for (const auto& c : h.coarse()) g.nodes.push_back({NodeLevel::coarse, c.id, c.name});
  g.nodes.push_back({NodeLevel::global, -1, "global"});
  return g;
}

}  // namespace

std::size_t RegionGraph::num_fine() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](auto& n) { return n.level == NodeLevel::fine; }));
}

std::size_t RegionGraph::num_coarse() const {
  return static_cast<std::size_t>(std::count_if(
      nodes.begin(), nodes.end(), [](auto& n) { return n.level == NodeLevel::coarse; }));
}

std::vector<std::size_t> RegionGraph::sources_of(std::size_t target) const {
  std::vector<std::size_t> out;
  for (const auto& [s, t] : edges)
    if (t == target) out.push_back(s);
  std::sort(out.begin(), out.end());
  return out;
}

void RegionGraph::validate() const {
  if (nodes.empty() || nodes.back().level != NodeLevel::global)
    throw ValidationError("graph must end with exactly one global node");
  const std::size_t nf = num_fine(), nc = num_coarse();
  if (nf != hierarchy.fine().size())
    throw ValidationError("graph fine nodes disagree with its hierarchy");
  if (nc != 0 && nc != hierarchy.coarse().size())
    throw ValidationError("graph coarse nodes disagree with its hierarchy");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const NodeLevel want = i < nf ? NodeLevel::fine
                           : i < nf + nc ? NodeLevel::coarse
                                         : NodeLevel::global;
    if (nodes[i].level != want) throw ValidationError("graph nodes out of canonical order");
  }
  std::vector<int> out_degree(nodes.size(), 0);
  for (const auto& [s, t] : edges) {
    if (s >= nodes.size() || t >= nodes.size())
      throw ValidationError("edge references a missing node");
    const auto ls = nodes[s].level, lt = nodes[t].level;
    const bool ok = (ls == NodeLevel::fine && lt == NodeLevel::coarse) ||
                    (ls == NodeLevel::coarse && lt == NodeLevel::global) ||
                    (ls == NodeLevel::fine && lt == NodeLevel::global && nc == 0);
    if (!ok)
      throw ValidationError("edge " + to_string(ls) + " -> " + to_string(lt) +
                            " is not a bottom-up hierarchy edge");
    ++out_degree[s];
  }
  if (topology == Topology::none) {
    if (!edges.empty()) throw ValidationError("topology 'none' must not carry edges");
    return;
  }
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i)
    if (out_degree[i] != 1)
      throw ValidationError("node '" + nodes[i].name + "' has out-degree " +
                            std::to_string(out_degree[i]) + ", expected 1");
  if (topology == Topology::hierarchical) {
    for (std::size_t i = 0; i < nf; ++i) {
      const std::size_t parent = nf + hierarchy.coarse_position(hierarchy.fine()[i].parent);
      if (std::find(edges.begin(), edges.end(), Edge{i, parent}) == edges.end())
        throw ValidationError("hierarchical graph misses edge for '" + nodes[i].name + "'");
    }
  }
  if (topology == Topology::single_level && nc != 0)
    throw ValidationError("single-level graph must not contain coarse nodes");
}

RegionGraph build_hierarchical(const AnatomyHierarchy& h) {
  RegionGraph g = skeleton(h, Topology::hierarchical, true);
  const std::size_t nf = h.fine().size();
  for (std::size_t i = 0; i < nf; ++i)
    g.edges.emplace_back(i, nf + h.coarse_position(h.fine()[i].parent));
  for (std::size_t c = 0; c < h.coarse().size(); ++c) g.edges.emplace_back(nf + c, g.global_index());
  return g;
}

RegionGraph build_random(const AnatomyHierarchy& h, std::uint64_t seed) {
  if (h.coarse().empty()) throw ValidationError("random topology needs at least one coarse node");
  RegionGraph g = skeleton(h, Topology::random, true);
  g.seed = seed;
  const std::size_t nf = h.fine().size(), nc = h.coarse().size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
  for (std::size_t i = 0; i < nf; ++i) g.edges.emplace_back(i, nf + pick(rng));
  for (std::size_t c = 0; c < nc; ++c) g.edges.emplace_back(nf + c, g.global_index());
  return g;
}

RegionGraph build_single_level(const AnatomyHierarchy& h) {
  RegionGraph g = skeleton(h, Topology::single_level, false);
  for (std::size_t i = 0; i < h.fine().size(); ++i) g.edges.emplace_back(i, g.global_index());
  return g;
}

RegionGraph build_graph(const AnatomyHierarchy& h, Topology t, std::uint64_t seed) {
  switch (t) {
    case Topology::hierarchical: return build_hierarchical(h);
    case Topology::random: return build_random(h, seed);
    case Topology::single_level: return build_single_level(h);
    case Topology::none: return skeleton(h, Topology::none, true);
  }
  throw ValidationError("unknown topology");
}

nlohmann::json RegionGraph::to_json() const {
  nlohmann::json j;
  j["topology"] = to_string(topology);
  j["seed"] = seed;
  j["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    j["nodes"].push_back({{"index", i},
                          {"level", to_string(nodes[i].level)},
                          {"id", nodes[i].ref_id},
                          {"name", nodes[i].name}});
  j["edges"] = nlohmann::json::array();
  for (const auto& [s, t] : edges) j["edges"].push_back({s, t});
  j["hierarchy"] = hierarchy.to_json();
  return j;
}

RegionGraph RegionGraph::from_json(const nlohmann::json& j) {
  RegionGraph g;
  try {
    g.topology = parse_topology(j.at("topology").get<std::string>());
    g.seed = j.value("seed", std::uint64_t{0});
    for (const auto& n : j.at("nodes"))
      g.nodes.push_back({parse_level(n.at("level").get<std::string>()), n.at("id").get<int>(),
                         n.at("name").get<std::string>()});
    for (const auto& e : j.at("edges"))
      g.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    g.hierarchy = AnatomyHierarchy::from_json(j.at("hierarchy"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed graph document: ") + e.what());
  }
  g.validate();
  return g;
}

RegionGraph RegionGraph::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path, "graph"));
}

void RegionGraph::save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

}  // namespace ctgraph

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctgraph/graph.hpp"
#include "ctgraph/volume.hpp"

namespace ctgraph {

// Ellipsoidal region painted with one label. Later regions overwrite earlier ones.
struct PhantomRegion {
  std::int32_t label = 0;
  std::array<double, 3> center{};  // voxel coordinates (i, j, t)
  std::array<double, 3> radii{};
  double intensity = 0.0;
};

// Focal: an additive spherical blob of `delta` centred on a random host
// voxel and clipped to the host labels. Diffuse: every host voxel shifts by
// `delta` (an organ-system-wide change such as emphysema); radius is unused.
struct Pathology {
  std::string name;
  std::vector<std::int32_t> hosts;
  double delta = 0.0;
  double prevalence = 0.0;
  double radius = 1.0;
  bool diffuse = false;
};

struct PhantomSpec {
  Extents extents;
  std::vector<PhantomRegion> regions;
  std::vector<Pathology> pathologies;
  double noise_sigma = 0.0;       // iid voxel noise
  double intensity_jitter = 0.0;  // per-sample, per-region shift of the base intensity
  std::int32_t num_labels = 0;    // K; 0 means max region label
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PhantomSpec from_json(const nlohmann::json& j);
  static PhantomSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct Phantom {
  Volume3D volume;
  LabelMask3D mask;
  std::vector<double> targets;  // one 0/1 entry per pathology
};

// Deterministic per spec.seed. Noise, intensity jitter, and lesions draw
// from independent streams, so toggling a lesion changes only host voxels.
Phantom generate_phantom(const PhantomSpec& spec);

// Seed used for sample `index` of a dataset built from `base_seed`.
std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t index);

// Lays every labelled region of the hierarchy out on a regular grid of
// ellipsoids and attaches a small table of pathologies.
PhantomSpec default_phantom_spec(const AnatomyHierarchy& h, Extents extents, std::uint64_t seed = 0);

}  // namespace ctgraph

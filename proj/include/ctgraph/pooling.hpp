#pragma once

// Mask-guided average pooling, layer fusion and global adaptive pooling.
//
// Kernels take channel-first feature maps (C x N voxels) and a label per
// voxel. Each label maps to at most one region slot; the pooled value of a
// slot is the channel-wise mean over its voxels. Sums accumulate in double
// regardless of the feature scalar type.
//
// Three implementations share one contract:
//   mask_pool           single pass over the features, OpenMP over channels
//   mask_pool_serial    the same pass on one thread
//   reference::mask_pool_rescan   one full rescan per region (test oracle, slow)
// Channel ownership is static, so mask_pool is bit-identical to
// mask_pool_serial for any thread count.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ctgraph/autodiff.hpp"
#include "ctgraph/encoder.hpp"
#include "ctgraph/graph.hpp"
#include "ctgraph/volume.hpp"

namespace ctgraph {

struct RegionAssignment {
  std::vector<int> slot_of_label;  // index = label, -1 = not pooled
  std::size_t regions = 0;

  // groups[r] lists the labels pooled into slot r; groups must be disjoint.
  static RegionAssignment from_groups(std::span<const std::vector<std::int32_t>> groups);
  int slot(std::int32_t label) const {
    return label >= 0 && static_cast<std::size_t>(label) < slot_of_label.size()
               ? slot_of_label[static_cast<std::size_t>(label)]
               : -1;
  }
};

struct PooledRegions {
  std::size_t regions = 0;
  std::size_t channels = 0;
  std::vector<double> means;         // regions x channels; zero rows for empty regions
  std::vector<std::int64_t> counts;  // voxels per region

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(means).subspan(r * channels, channels);
  }
};

template <class T>
PooledRegions mask_pool(std::span<const T> features, std::size_t channels,
                        std::span<const std::int32_t> labels, const RegionAssignment& assign);
template <class T>
PooledRegions mask_pool_serial(std::span<const T> features, std::size_t channels,
                               std::span<const std::int32_t> labels, const RegionAssignment& assign);

namespace reference {
template <class T>
PooledRegions mask_pool_rescan(std::span<const T> features, std::size_t channels,
                               std::span<const std::int32_t> labels, const RegionAssignment& assign);
// Triple loop over target cells then source boxes.
std::vector<double> adaptive_avg_pool(const FeatureLayer& layer, std::array<std::size_t, 3> grid);
}  // namespace reference

// `mask` must already be resized to the layer's extents.
PooledRegions mask_pool_layer(const FeatureLayer& layer, const LabelMask3D& mask,
                              const RegionAssignment& assign);

// Concatenates one region's per-layer vectors; lengths must match `channels`.
std::vector<double> fuse_layers(std::span<const std::vector<double>> per_layer,
                                std::span<const std::size_t> channels);

inline constexpr std::array<std::size_t, 3> kGlobalGrid = {4, 4, 2};

// Cell (a, b, c) averages rows [floor(a*H/gh), floor((a+1)*H/gh)) and likewise
// per axis, so the cells tile the input. Output layout is (gh, gw, gd, C).
Tensor adaptive_avg_pool(const FeatureLayer& layer, std::array<std::size_t, 3> grid = kGlobalGrid);

struct GlobalFeatureGrid {
  Tensor grid;  // (4, 4, 2, C_L)

  std::size_t channels() const { return grid.shape().back(); }
  std::span<const double> flat() const { return grid.data(); }
};

struct RegionFeatureSet {
  std::vector<int> region_ids;
  std::vector<std::size_t> layer_channels;
  Tensor fused;                            // regions x C_total
  std::vector<std::uint8_t> layer_valid;   // regions x L
  std::vector<std::int64_t> voxel_counts;  // regions x L

  std::size_t regions() const { return region_ids.size(); }
  std::size_t layers() const { return layer_channels.size(); }
  std::size_t total_channels() const;
  std::size_t layer_offset(std::size_t l) const;
  // Non-empty at one or more layers.
  bool valid(std::size_t r) const;
  std::vector<bool> validity() const;
  std::span<const double> region(std::size_t r) const;
  std::span<const double> layer_vector(std::size_t r, std::size_t l) const;
};

struct PooledFeatures {
  RegionFeatureSet fine;
  RegionFeatureSet coarse;
  GlobalFeatureGrid global;
  std::vector<double> global_mean;  // per-layer global average pooling, fused (C_total)

  void save(const std::filesystem::path& path) const;
  static PooledFeatures load(const std::filesystem::path& path);
};

RegionAssignment fine_assignment(const AnatomyHierarchy& h);
// Coarse slots pool the union of their children's labels plus their own label.
RegionAssignment coarse_assignment(const AnatomyHierarchy& h);

PooledFeatures pool_all(const FeaturePyramid& pyramid, const LabelMask3D& mask,
                        const AnatomyHierarchy& h);

// Differentiable wrappers; forward values come from the kernels above.
namespace ad {

// layer: (C x N) channel-first features. Returns (regions x C).
Var mask_pool(const Var& layer, std::span<const std::int32_t> labels, const RegionAssignment& assign);
// layer: (C x N) on extents e. Returns 1 x (gh*gw*gd*C) in (a, b, c, channel) order.
Var adaptive_avg_pool(const Var& layer, Extents e, std::array<std::size_t, 3> grid = kGlobalGrid);

}  // namespace ad

// Pooled features as tape values: the input of the graph attention network.
struct PooledVars {
  ad::Var fine;    // F x C_total
  ad::Var coarse;  // C x C_total
  ad::Var global;  // 1 x 32*C_L
  std::vector<bool> fine_valid;
  std::vector<bool> coarse_valid;
};

PooledVars as_constants(ad::Tape& tape, const PooledFeatures& f);
// Pools differentiably from per-layer (C_l x N_l) vars sharing `pyramid`'s geometry.
PooledVars pool_on_tape(std::span<const ad::Var> layers, const FeaturePyramid& pyramid,
                        const LabelMask3D& mask, const AnatomyHierarchy& h);

}  // namespace ctgraph

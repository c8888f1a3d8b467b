#pragma once

// Voxel grids. Every flat array in the project uses the same index order:
// i over H, j over W, t over D, with t fastest: index = (i * W + j) * D + t.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ctgraph {

struct Extents {
  std::size_t h = 0, w = 0, d = 0;

  std::size_t voxels() const { return h * w * d; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t t) const { return (i * w + j) * d + t; }
  bool positive() const { return h > 0 && w > 0 && d > 0; }
  std::string str() const;
  friend bool operator==(const Extents&, const Extents&) = default;
};

struct Volume3D {
  Extents extents;
  std::vector<double> voxels;

  Volume3D() = default;
  explicit Volume3D(Extents e, double fill = 0.0);
  double& at(std::size_t i, std::size_t j, std::size_t t) { return voxels[extents.index(i, j, t)]; }
  double at(std::size_t i, std::size_t j, std::size_t t) const {
    return voxels[extents.index(i, j, t)];
  }
  void validate() const;
  friend bool operator==(const Volume3D&, const Volume3D&) = default;
};

// Label 0 is background; labels run 1..K.
struct LabelMask3D {
  Extents extents;
  std::vector<std::int32_t> labels;
  std::int32_t num_labels = 0;  // K

  LabelMask3D() = default;
  LabelMask3D(Extents e, std::int32_t k, std::int32_t fill = 0);
  std::int32_t at(std::size_t i, std::size_t j, std::size_t t) const {
    return labels[extents.index(i, j, t)];
  }
  std::int32_t& at(std::size_t i, std::size_t j, std::size_t t) {
    return labels[extents.index(i, j, t)];
  }
  void validate() const;
  std::vector<std::int64_t> histogram() const;  // length K + 1
  friend bool operator==(const LabelMask3D&, const LabelMask3D&) = default;
};

// Nearest-neighbour resize using voxel centres:
//   src = min(floor((tgt + 0.5) * src_extent / tgt_extent), src_extent - 1) per axis.
LabelMask3D resize_mask_nearest(const LabelMask3D& mask, Extents target);

void save_volume(const std::filesystem::path& path, const Volume3D& v);
Volume3D load_volume(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const LabelMask3D& m);
LabelMask3D load_mask(const std::filesystem::path& path);

}  // namespace ctgraph

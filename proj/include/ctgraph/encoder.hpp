#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctgraph/volume.hpp"

namespace ctgraph {

// Channel widths per layer plus the downsample factor each layer applies to
// the one before it (the first factor applies to the input volume).
struct EncoderPreset {
  std::string name;
  std::vector<std::size_t> channels;
  std::vector<std::size_t> factors;

  std::size_t layers() const { return channels.size(); }
  std::size_t total_channels() const;
  std::size_t cumulative_factor(std::size_t layer) const;
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderPreset from_json(const nlohmann::json& j);
};

// Channel layouts follow common 3D CT encoders; weights never do.
const std::vector<EncoderPreset>& builtin_presets();
std::vector<EncoderPreset> load_preset_registry(const std::filesystem::path& path);
const EncoderPreset& find_preset(const std::string& name, std::span<const EncoderPreset> registry);
const EncoderPreset& find_preset(const std::string& name);

// Channel-first feature map: data[(c * H + i) * W * D + j * D + t].
struct FeatureLayer {
  Extents extents;
  std::size_t channels = 0;
  std::vector<double> data;

  FeatureLayer() = default;
  FeatureLayer(Extents e, std::size_t c, double fill = 0.0)
      : extents(e), channels(c), data(e.voxels() * c, fill) {}
  double at(std::size_t c, std::size_t i, std::size_t j, std::size_t t) const {
    return data[c * extents.voxels() + extents.index(i, j, t)];
  }
  std::span<const double> channel(std::size_t c) const {
    return std::span<const double>(data).subspan(c * extents.voxels(), extents.voxels());
  }
  friend bool operator==(const FeatureLayer&, const FeatureLayer&) = default;
};

struct FeaturePyramid {
  std::vector<FeatureLayer> layers;

  std::vector<std::size_t> channel_list() const;
  std::size_t total_channels() const;
  const FeatureLayer& last() const { return layers.back(); }
  // Non-empty, consistent sizes, extents non-increasing with depth; channels
  // must equal the preset's when one is given.
  void validate(const EncoderPreset* preset = nullptr) const;
  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

// Deterministic stand-in for a frozen encoder. Each layer-l voxel sees one
// box of the input (the cumulative factor cubed). Its statistics
// (m, m^2, var) are lifted to C_l channels with a fixed seeded linear map.
// m is the box mean and var the variance of the input inside the box.
FeaturePyramid synth_encode(const Volume3D& volume, const EncoderPreset& preset, std::uint64_t seed);

// Writes layer_<l>.bin (l from 1) plus pyramid.json into dir; returns the layer paths.
std::vector<std::filesystem::path> export_pyramid(const FeaturePyramid& p,
                                                  const std::filesystem::path& dir,
                                                  const std::string& preset_name = "");
// Each path holds one 4-D (C, H, W, D) record; layers are taken in the given order.
FeaturePyramid import_pyramid(std::span<const std::filesystem::path> paths);
// Uses dir/pyramid.json when present, otherwise layer_*.bin in numeric order.
FeaturePyramid import_pyramid_dir(const std::filesystem::path& dir);

}  // namespace ctgraph

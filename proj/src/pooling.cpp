#include "ctgraph/pooling.hpp"

#include <algorithm>

#include "ctgraph/container.hpp"
#include "ctgraph/error.hpp"

namespace ctgraph {

RegionAssignment RegionAssignment::from_groups(std::span<const std::vector<std::int32_t>> groups) {
  RegionAssignment a;
  a.regions = groups.size();
  std::int32_t max_label = 0;
  for (const auto& g : groups)
    for (auto l : g) max_label = std::max(max_label, l);
  a.slot_of_label.assign(static_cast<std::size_t>(max_label) + 1, -1);
  for (std::size_t r = 0; r < groups.size(); ++r)
    for (auto l : groups[r]) {
      if (l < 0) throw ValidationError("negative label in region group");
      auto& s = a.slot_of_label[static_cast<std::size_t>(l)];
      if (s != -1 && s != static_cast<int>(r))
        throw ValidationError("label " + std::to_string(l) + " assigned to two regions");
      s = static_cast<int>(r);
    }
  return a;
}

namespace {

void check_sizes(std::size_t features, std::size_t channels, std::size_t voxels) {
  if (channels == 0 || features != channels * voxels)
    throw DimensionError("pooling: " + std::to_string(features) + " feature values do not form " +
                         std::to_string(channels) + " channels over " + std::to_string(voxels) +
                         " voxels");
}

// Per-voxel slot with unpooled voxels sent to a dump slot `regions`.
std::vector<std::int32_t> voxel_slots(std::span<const std::int32_t> labels,
                                      const RegionAssignment& assign, std::vector<std::int64_t>& counts) {
  const auto dump = static_cast<std::int32_t>(assign.regions);
  std::vector<std::int32_t> slots(labels.size());
  counts.assign(assign.regions + 1, 0);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    const int s = assign.slot(labels[v]);
    slots[v] = s < 0 ? dump : s;
    ++counts[static_cast<std::size_t>(slots[v])];
  }
  counts.pop_back();
  return slots;
}

template <class T>
PooledRegions single_pass(std::span<const T> features, std::size_t channels,
                          std::span<const std::int32_t> labels, const RegionAssignment& assign,
                          bool parallel) {
  const std::size_t n = labels.size();
  check_sizes(features.size(), channels, n);
  PooledRegions out;
  out.regions = assign.regions;
  out.channels = channels;
  out.means.assign(assign.regions * channels, 0.0);
  const auto slots = voxel_slots(labels, assign, out.counts);
  const std::int32_t* slot = slots.data();
  const std::size_t R = assign.regions;

#pragma omp parallel if (parallel)
  {
    std::vector<double> acc(R + 1);
#pragma omp for schedule(static)
    for (std::size_t c = 0; c < channels; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const T* f = features.data() + c * n;
      for (std::size_t v = 0; v < n; ++v) acc[static_cast<std::size_t>(slot[v])] += static_cast<double>(f[v]);
      for (std::size_t r = 0; r < R; ++r)
        if (out.counts[r] > 0) out.means[r * channels + c] = acc[r] / static_cast<double>(out.counts[r]);
    }
  }
  return out;
}

}  // namespace

template <class T>
PooledRegions mask_pool(std::span<const T> features, std::size_t channels,
                        std::span<const std::int32_t> labels, const RegionAssignment& assign) {
  return single_pass(features, channels, labels, assign, true);
}

template <class T>
PooledRegions mask_pool_serial(std::span<const T> features, std::size_t channels,
                               std::span<const std::int32_t> labels, const RegionAssignment& assign) {
  return single_pass(features, channels, labels, assign, false);
}

template PooledRegions mask_pool<float>(std::span<const float>, std::size_t,
                                        std::span<const std::int32_t>, const RegionAssignment&);
template PooledRegions mask_pool<double>(std::span<const double>, std::size_t,
                                         std::span<const std::int32_t>, const RegionAssignment&);
template PooledRegions mask_pool_serial<float>(std::span<const float>, std::size_t,
                                               std::span<const std::int32_t>, const RegionAssignment&);
template PooledRegions mask_pool_serial<double>(std::span<const double>, std::size_t,
                                                std::span<const std::int32_t>, const RegionAssignment&);

PooledRegions mask_pool_layer(const FeatureLayer& layer, const LabelMask3D& mask,
                              const RegionAssignment& assign) {
  if (!(mask.extents == layer.extents))
    throw DimensionError("mask extents " + mask.extents.str() + " differ from feature layer " +
                         layer.extents.str() + "; resize the mask first");
  return mask_pool<double>(layer.data, layer.channels, mask.labels, assign);
}

std::vector<double> fuse_layers(std::span<const std::vector<double>> per_layer,
                                std::span<const std::size_t> channels) {
  if (per_layer.size() != channels.size())
    throw DimensionError("fuse_layers: got " + std::to_string(per_layer.size()) +
                         " layer vectors, expected " + std::to_string(channels.size()));
  std::vector<double> out;
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    if (per_layer[l].size() != channels[l])
      throw DimensionError("fuse_layers: layer " + std::to_string(l + 1) + " vector has " +
                           std::to_string(per_layer[l].size()) + " values, expected " +
                           std::to_string(channels[l]) + " (missing layer)");
    out.insert(out.end(), per_layer[l].begin(), per_layer[l].end());
  }
  return out;
}

namespace {

std::vector<std::size_t> cell_bounds(std::size_t extent, std::size_t cells) {
  std::vector<std::size_t> b(cells + 1);
  for (std::size_t a = 0; a <= cells; ++a) b[a] = a * extent / cells;
  return b;
}

void check_grid(Extents e, std::array<std::size_t, 3> grid) {
  if (e.h < grid[0] || e.w < grid[1] || e.d < grid[2])
    throw DimensionError("adaptive pooling: input " + e.str() + " is smaller than the target grid " +
                         std::to_string(grid[0]) + "x" + std::to_string(grid[1]) + "x" +
                         std::to_string(grid[2]));
}

// out[((a*gw + b)*gd + c)*C + ch]
void adaptive_kernel(const double* features, std::size_t channels, Extents e,
                     std::array<std::size_t, 3> grid, double* out) {
  const auto bh = cell_bounds(e.h, grid[0]), bw = cell_bounds(e.w, grid[1]), bd = cell_bounds(e.d, grid[2]);
  const std::size_t n = e.voxels();
#pragma omp parallel for schedule(static)
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* f = features + ch * n;
    for (std::size_t a = 0; a < grid[0]; ++a)
      for (std::size_t b = 0; b < grid[1]; ++b)
        for (std::size_t c = 0; c < grid[2]; ++c) {
          double acc = 0.0;
          for (std::size_t i = bh[a]; i < bh[a + 1]; ++i)
            for (std::size_t j = bw[b]; j < bw[b + 1]; ++j) {
              const double* row = f + e.index(i, j, 0);
              for (std::size_t t = bd[c]; t < bd[c + 1]; ++t) acc += row[t];
            }
          const double cnt = double((bh[a + 1] - bh[a]) * (bw[b + 1] - bw[b]) * (bd[c + 1] - bd[c]));
          out[((a * grid[1] + b) * grid[2] + c) * channels + ch] = acc / cnt;
        }
  }
}

}  // namespace

Tensor adaptive_avg_pool(const FeatureLayer& layer, std::array<std::size_t, 3> grid) {
  check_grid(layer.extents, grid);
  Tensor out({grid[0], grid[1], grid[2], layer.channels}, 0.0);
  adaptive_kernel(layer.data.data(), layer.channels, layer.extents, grid, out.data().data());
  return out;
}

std::size_t RegionFeatureSet::total_channels() const {
  std::size_t n = 0;
  for (auto c : layer_channels) n += c;
  return n;
}

std::size_t RegionFeatureSet::layer_offset(std::size_t l) const {
  std::size_t off = 0;
  for (std::size_t k = 0; k < l; ++k) off += layer_channels[k];
  return off;
}

bool RegionFeatureSet::valid(std::size_t r) const {
  for (std::size_t l = 0; l < layers(); ++l)
    if (layer_valid[r * layers() + l]) return true;
  return false;
}

std::vector<bool> RegionFeatureSet::validity() const {
  std::vector<bool> v(regions());
  for (std::size_t r = 0; r < regions(); ++r) v[r] = valid(r);
  return v;
}

std::span<const double> RegionFeatureSet::region(std::size_t r) const {
  return fused.data().subspan(r * total_channels(), total_channels());
}

std::span<const double> RegionFeatureSet::layer_vector(std::size_t r, std::size_t l) const {
  return region(r).subspan(layer_offset(l), layer_channels.at(l));
}

RegionAssignment fine_assignment(const AnatomyHierarchy& h) {
  std::vector<std::vector<std::int32_t>> groups;
  for (const auto& f : h.fine()) groups.push_back({f.label});
  return RegionAssignment::from_groups(groups);
}

RegionAssignment coarse_assignment(const AnatomyHierarchy& h) {
  std::vector<std::vector<std::int32_t>> groups;
  for (std::size_t c = 0; c < h.coarse().size(); ++c) groups.push_back(h.coarse_labels(c));
  return RegionAssignment::from_groups(groups);
}

namespace {

RegionFeatureSet assemble(const std::vector<PooledRegions>& per_layer, std::vector<int> ids,
                          std::vector<std::size_t> channels) {
  RegionFeatureSet s;
  s.region_ids = std::move(ids);
  s.layer_channels = std::move(channels);
  const std::size_t R = s.region_ids.size(), L = s.layer_channels.size(), C = s.total_channels();
  if (R == 0) return s;
  s.fused = Tensor({R, C}, 0.0);
  s.layer_valid.assign(R * L, 0);
  s.voxel_counts.assign(R * L, 0);
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<std::vector<double>> parts;
    for (std::size_t l = 0; l < L; ++l) {
      const auto row = per_layer[l].row(r);
      parts.emplace_back(row.begin(), row.end());
      s.layer_valid[r * L + l] = per_layer[l].counts[r] > 0;
      s.voxel_counts[r * L + l] = per_layer[l].counts[r];
    }
    const auto f = fuse_layers(parts, s.layer_channels);
    std::copy(f.begin(), f.end(), s.fused.data().begin() + static_cast<std::ptrdiff_t>(r * C));
  }
  return s;
}

}  // namespace

PooledFeatures pool_all(const FeaturePyramid& pyramid, const LabelMask3D& mask,
                        const AnatomyHierarchy& h) {
  pyramid.validate();
  mask.validate();
  const auto fa = fine_assignment(h), ca = coarse_assignment(h);
  std::vector<PooledRegions> fine_layers, coarse_layers;
  PooledFeatures out;
  for (const auto& layer : pyramid.layers) {
    const LabelMask3D resized = resize_mask_nearest(mask, layer.extents);
    fine_layers.push_back(mask_pool_layer(layer, resized, fa));
    coarse_layers.push_back(mask_pool_layer(layer, resized, ca));
    const std::vector<std::int32_t> everything(layer.extents.voxels(), 0);
    RegionAssignment all;
    all.slot_of_label = {0};
    all.regions = 1;
    const auto gap = mask_pool<double>(layer.data, layer.channels, everything, all);
    out.global_mean.insert(out.global_mean.end(), gap.means.begin(), gap.means.end());
  }
  std::vector<int> fine_ids, coarse_ids;
  for (const auto& f : h.fine()) fine_ids.push_back(f.id);
  for (const auto& c : h.coarse()) coarse_ids.push_back(c.id);
  out.fine = assemble(fine_layers, fine_ids, pyramid.channel_list());
  out.coarse = assemble(coarse_layers, coarse_ids, pyramid.channel_list());
  out.global.grid = adaptive_avg_pool(pyramid.last());
  return out;
}

namespace {

void save_set(Container& c, const std::string& prefix, const RegionFeatureSet& s) {
  nlohmann::json meta{{"region_ids", s.region_ids}, {"layer_channels", s.layer_channels}};
  if (s.regions() == 0) {
    c.add_integers(prefix + "_ids", {1}, {0}, DType::i64, {{"empty", true}, {"layer_channels", s.layer_channels}});
    return;
  }
  c.add(prefix, s.fused, DType::f64, meta);
  c.add_integers(prefix + "_valid", {s.regions(), s.layers()},
                 std::vector<std::int64_t>(s.layer_valid.begin(), s.layer_valid.end()), DType::u8);
  c.add_integers(prefix + "_counts", {s.regions(), s.layers()}, s.voxel_counts, DType::i64);
}

RegionFeatureSet load_set(const Container& c, const std::string& prefix) {
  RegionFeatureSet s;
  if (c.contains(prefix + "_ids")) {
    s.layer_channels = c.get(prefix + "_ids").meta.at("layer_channels").get<std::vector<std::size_t>>();
    return s;
  }
  const auto& r = c.get(prefix);
  s.region_ids = r.meta.at("region_ids").get<std::vector<int>>();
  s.layer_channels = r.meta.at("layer_channels").get<std::vector<std::size_t>>();
  s.fused = r.tensor();
  const auto& v = c.get(prefix + "_valid");
  s.layer_valid.assign(v.integers.begin(), v.integers.end());
  s.voxel_counts = c.get(prefix + "_counts").integers;
  if (s.fused.rows() != s.region_ids.size() || s.fused.cols() != s.total_channels() ||
      s.layer_valid.size() != s.regions() * s.layers())
    throw FormatError("pooled feature record '" + prefix + "' is inconsistent with its metadata");
  return s;
}

}  // namespace

void PooledFeatures::save(const std::filesystem::path& path) const {
  Container c;
  save_set(c, "fine", fine);
  save_set(c, "coarse", coarse);
  c.add("global", global.grid);
  c.add("global_mean", Tensor::vector(global_mean));
  write_container(path, c);
}

PooledFeatures PooledFeatures::load(const std::filesystem::path& path) {
  const Container c = read_container(path);
  PooledFeatures f;
  try {
    f.fine = load_set(c, "fine");
    f.coarse = load_set(c, "coarse");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("pooled features '" + path.string() + "': " + e.what());
  }
  f.global.grid = c.get("global").tensor();
  if (f.global.grid.rank() != 4) throw FormatError("global grid record must be 4-D");
  f.global_mean = c.get("global_mean").reals;
  return f;
}

namespace ad {

Var mask_pool(const Var& layer, std::span<const std::int32_t> labels, const RegionAssignment& assign) {
  const Tensor& lv = layer.value();
  const std::size_t channels = lv.rows(), n = lv.cols();
  if (n != labels.size())
    throw DimensionError("mask_pool: layer " + shape_str(lv.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  PooledRegions p = ctgraph::mask_pool<double>(lv.data(), channels, labels, assign);
  const std::size_t R = assign.regions;
  std::vector<std::int32_t> slots(n);
  for (std::size_t v = 0; v < n; ++v) slots[v] = assign.slot(labels[v]);
  auto counts = p.counts;
  const std::size_t il = layer.id();
  return layer.tape().record(Tensor({R, channels}, std::move(p.means)), {il},
                             [=](Tape& t, std::size_t self) {
                               const auto& g = t.upstream(self).storage();
                               auto dst = t.grad_buffer(il);
                               for (std::size_t c = 0; c < channels; ++c)
                                 for (std::size_t v = 0; v < n; ++v) {
                                   const auto s = slots[v];
                                   if (s < 0) continue;
                                   dst[c * n + v] += g[static_cast<std::size_t>(s) * channels + c] /
                                                     static_cast<double>(counts[static_cast<std::size_t>(s)]);
                                 }
                             });
}

Var adaptive_avg_pool(const Var& layer, Extents e, std::array<std::size_t, 3> grid) {
  const Tensor& lv = layer.value();
  const std::size_t channels = lv.rows();
  if (lv.cols() != e.voxels())
    throw DimensionError("adaptive_avg_pool: layer " + shape_str(lv.shape()) + " vs extents " + e.str());
  check_grid(e, grid);
  const std::size_t cells = grid[0] * grid[1] * grid[2];
  Tensor out({1, cells * channels}, 0.0);
  adaptive_kernel(lv.data().data(), channels, e, grid, out.data().data());
  const std::size_t il = layer.id();
  return layer.tape().record(std::move(out), {il}, [=](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self).storage();
    auto dst = t.grad_buffer(il);
    const auto bh = cell_bounds(e.h, grid[0]), bw = cell_bounds(e.w, grid[1]), bd = cell_bounds(e.d, grid[2]);
    const std::size_t n = e.voxels();
    for (std::size_t a = 0; a < grid[0]; ++a)
      for (std::size_t b = 0; b < grid[1]; ++b)
        for (std::size_t c = 0; c < grid[2]; ++c) {
          const double cnt = double((bh[a + 1] - bh[a]) * (bw[b + 1] - bw[b]) * (bd[c + 1] - bd[c]));
          const std::size_t cell = (a * grid[1] + b) * grid[2] + c;
          for (std::size_t ch = 0; ch < channels; ++ch) {
            const double share = g[cell * channels + ch] / cnt;
            for (std::size_t i = bh[a]; i < bh[a + 1]; ++i)
              for (std::size_t j = bw[b]; j < bw[b + 1]; ++j)
                for (std::size_t tt = bd[c]; tt < bd[c + 1]; ++tt) dst[ch * n + e.index(i, j, tt)] += share;
          }
        }
  });
}

}  // namespace ad

PooledVars as_constants(ad::Tape& tape, const PooledFeatures& f) {
  PooledVars v;
  if (f.fine.regions()) v.fine = tape.constant(f.fine.fused);
  if (f.coarse.regions()) v.coarse = tape.constant(f.coarse.fused);
  v.global = tape.constant(f.global.grid.reshaped({1, f.global.grid.numel()}));
  v.fine_valid = f.fine.validity();
  v.coarse_valid = f.coarse.validity();
  return v;
}

PooledVars pool_on_tape(std::span<const ad::Var> layers, const FeaturePyramid& pyramid,
                        const LabelMask3D& mask, const AnatomyHierarchy& h) {
  if (layers.size() != pyramid.layers.size())
    throw DimensionError("pool_all: " + std::to_string(layers.size()) + " layer vars for a " +
                         std::to_string(pyramid.layers.size()) + "-layer pyramid");
  const auto fa = fine_assignment(h), ca = coarse_assignment(h);
  std::vector<ad::Var> fine_parts, coarse_parts;
  PooledVars out;
  out.fine_valid.assign(fa.regions, false);
  out.coarse_valid.assign(ca.regions, false);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LabelMask3D resized = resize_mask_nearest(mask, pyramid.layers[l].extents);
    for (std::size_t r = 0; r < fa.regions; ++r) {
      const auto& f = h.fine()[r];
      if (std::find(resized.labels.begin(), resized.labels.end(), f.label) != resized.labels.end())
        out.fine_valid[r] = true;
    }
    for (std::size_t r = 0; r < ca.regions; ++r)
      for (auto lab : h.coarse_labels(r))
        if (std::find(resized.labels.begin(), resized.labels.end(), lab) != resized.labels.end())
          out.coarse_valid[r] = true;
    if (fa.regions) fine_parts.push_back(ad::mask_pool(layers[l], resized.labels, fa));
    if (ca.regions) coarse_parts.push_back(ad::mask_pool(layers[l], resized.labels, ca));
  }
  if (!fine_parts.empty()) out.fine = ad::concat_cols(fine_parts);
  if (!coarse_parts.empty()) out.coarse = ad::concat_cols(coarse_parts);
  out.global = ad::adaptive_avg_pool(layers.back(), pyramid.last().extents);
  return out;
}

}  // namespace ctgraph

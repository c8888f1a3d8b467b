#include <algorithm>

#include "ctgraph/error.hpp"
#include "ctgraph/pooling.hpp"

namespace ctgraph::reference {

// One full pass over the mask per region. O(R * C * N); kept for tests and benchmarks.
template <class T>
PooledRegions mask_pool_rescan(std::span<const T> features, std::size_t channels,
                               std::span<const std::int32_t> labels, const RegionAssignment& assign) {
  const std::size_t n = labels.size();
  if (channels == 0 || features.size() != channels * n)
    throw DimensionError("mask_pool_rescan: feature size does not match channels x voxels");
  PooledRegions out;
  out.regions = assign.regions;
  out.channels = channels;
  out.means.assign(assign.regions * channels, 0.0);
  out.counts.assign(assign.regions, 0);
  std::vector<double> sums(channels);
  for (std::size_t r = 0; r < assign.regions; ++r) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::int64_t count = 0;
    for (std::size_t v = 0; v < n; ++v) {
      if (assign.slot(labels[v]) != static_cast<int>(r)) continue;
      ++count;
      for (std::size_t c = 0; c < channels; ++c) sums[c] += static_cast<double>(features[c * n + v]);
    }
    out.counts[r] = count;
    if (count == 0) continue;
    for (std::size_t c = 0; c < channels; ++c) out.means[r * channels + c] = sums[c] / static_cast<double>(count);
  }
  return out;
}

template PooledRegions mask_pool_rescan<float>(std::span<const float>, std::size_t,
                                               std::span<const std::int32_t>, const RegionAssignment&);
template PooledRegions mask_pool_rescan<double>(std::span<const double>, std::size_t,
                                                std::span<const std::int32_t>, const RegionAssignment&);

std::vector<double> adaptive_avg_pool(const FeatureLayer& layer, std::array<std::size_t, 3> grid) {
  const Extents e = layer.extents;
  std::vector<double> out(grid[0] * grid[1] * grid[2] * layer.channels, 0.0);
  std::size_t k = 0;
  for (std::size_t a = 0; a < grid[0]; ++a)
    for (std::size_t b = 0; b < grid[1]; ++b)
      for (std::size_t c = 0; c < grid[2]; ++c)
        for (std::size_t ch = 0; ch < layer.channels; ++ch) {
          double acc = 0.0;
          std::size_t cnt = 0;
          for (std::size_t i = a * e.h / grid[0]; i < (a + 1) * e.h / grid[0]; ++i)
            for (std::size_t j = b * e.w / grid[1]; j < (b + 1) * e.w / grid[1]; ++j)
              for (std::size_t t = c * e.d / grid[2]; t < (c + 1) * e.d / grid[2]; ++t) {
                acc += layer.at(ch, i, j, t);
                ++cnt;
              }
          out[k++] = acc / static_cast<double>(cnt);
        }
  return out;
}

}  // namespace ctgraph::reference

#pragma once

// Random instances shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ctgraph/encoder.hpp"
#include "ctgraph/gat.hpp"
#include "ctgraph/graph.hpp"
#include "ctgraph/pooling.hpp"
#include "ctgraph/volume.hpp"

namespace fixtures {

using ctgraph::AnatomyHierarchy;
using ctgraph::Extents;

// Up to max_fine fine regions under up to max_coarse coarse regions.
// Childless coarse regions get their own label; others get one with
// probability 0.3. Labels are a random permutation, so ids and labels differ.
inline AnatomyHierarchy random_hierarchy(std::mt19937_64& rng, std::size_t max_fine = 34,
                                         std::size_t max_coarse = 8) {
  std::uniform_int_distribution<std::size_t> nf(1, max_fine), nc(1, max_coarse);
  const std::size_t f = nf(rng), c = nc(rng);
  std::vector<std::int32_t> labels(f + c);
  std::iota(labels.begin(), labels.end(), 1);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::uniform_int_distribution<std::size_t> parent(0, c - 1);
  std::vector<ctgraph::FineRegion> fine;
  std::vector<bool> has_child(c, false);
  for (std::size_t i = 0; i < f; ++i) {
    const std::size_t p = parent(rng);
    has_child[p] = true;
    fine.push_back({static_cast<int>(i), "f" + std::to_string(i), labels[i], static_cast<int>(p)});
  }
  std::vector<ctgraph::CoarseRegion> coarse;
  std::bernoulli_distribution own(0.3);
  for (std::size_t k = 0; k < c; ++k) {
    ctgraph::CoarseRegion r{static_cast<int>(k), "c" + std::to_string(k), std::nullopt, {}};
    if (!has_child[k] || own(rng)) r.label = labels[f + k];
    coarse.push_back(r);
  }
  return AnatomyHierarchy(std::move(fine), std::move(coarse));
}

// Labels 0..k uniformly, then a random label (if any) is removed entirely so
// empty regions are exercised.
inline ctgraph::LabelMask3D random_mask(std::mt19937_64& rng, Extents e, std::int32_t k, bool drop = true) {
  ctgraph::LabelMask3D m(e, k);
  std::uniform_int_distribution<std::int32_t> lab(0, k);
  for (auto& v : m.labels) v = lab(rng);
  if (drop && k > 1) {
    const std::int32_t gone = lab(rng);
    for (auto& v : m.labels)
      if (v == gone) v = 0;
  }
  return m;
}

inline ctgraph::FeatureLayer random_layer(std::mt19937_64& rng, Extents e, std::size_t channels) {
  ctgraph::FeatureLayer l(e, channels);
  std::normal_distribution<double> n;
  for (auto& v : l.data) v = n(rng);
  return l;
}

// Extents shrink by a random factor of 1 or 2 per layer (never below 1).
inline ctgraph::FeaturePyramid random_pyramid(std::mt19937_64& rng, Extents e, std::size_t layers,
                                              std::size_t max_channels) {
  ctgraph::FeaturePyramid p;
  std::uniform_int_distribution<std::size_t> ch(1, max_channels), halve(0, 1);
  for (std::size_t l = 0; l < layers; ++l) {
    if (l > 0 && halve(rng)) e = {std::max<std::size_t>(1, e.h / 2), std::max<std::size_t>(1, e.w / 2),
                                  std::max<std::size_t>(1, e.d / 2)};
    p.layers.push_back(random_layer(rng, e, ch(rng)));
  }
  return p;
}

inline Extents random_extents(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  std::uniform_int_distribution<std::size_t> d(lo, hi);
  return {d(rng), d(rng), d(rng)};
}

inline ctgraph::RegionFeatureSet random_region_set(std::mt19937_64& rng, std::size_t regions,
                                                    const std::vector<std::size_t>& channels,
                                                    double invalid_prob) {
  ctgraph::RegionFeatureSet s;
  s.layer_channels = channels;
  std::size_t total = 0;
  for (auto c : channels) total += c;
  s.fused = ctgraph::Tensor({regions, total});
  std::normal_distribution<double> n;
  std::bernoulli_distribution invalid(invalid_prob);
  for (std::size_t r = 0; r < regions; ++r) {
    s.region_ids.push_back(static_cast<int>(r));
    const bool ok = !invalid(rng);
    for (std::size_t l = 0; l < channels.size(); ++l) {
      s.layer_valid.push_back(ok ? 1 : 0);
      s.voxel_counts.push_back(ok ? 1 + static_cast<std::int64_t>(rng() % 50) : 0);
    }
    if (ok)
      for (std::size_t c = 0; c < total; ++c) s.fused.at(r, c) = n(rng);
  }
  return s;
}

// Pooled features for a graph of `fine` and `coarse` regions without going
// through a pyramid. The global grid has 4x4x2 cells of `global_channels`.
inline ctgraph::PooledFeatures random_pooled(std::mt19937_64& rng, std::size_t fine, std::size_t coarse,
                                             const std::vector<std::size_t>& channels,
                                             std::size_t global_channels, double invalid_prob = 0.15) {
  ctgraph::PooledFeatures p;
  p.fine = random_region_set(rng, fine, channels, invalid_prob);
  p.coarse = random_region_set(rng, coarse, channels, invalid_prob);
  p.global.grid = ctgraph::Tensor({4, 4, 2, global_channels});
  std::normal_distribution<double> n;
  for (auto& v : p.global.grid.storage()) v = n(rng);
  p.global_mean.assign(p.fine.total_channels(), 0.0);
  return p;
}

// Perturbs every parameter so LayerNorm affine terms and biases are not at
// their identity initial values.
inline void jitter_parameters(std::vector<ctgraph::Parameter*> params, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto* p : params)
    for (auto& v : p->value.storage()) v += n(rng);
}

inline ctgraph::GatConfig small_gat_config(std::mt19937_64& rng, std::size_t fine_in, std::size_t global_in) {
  ctgraph::GatConfig c;
  c.fine_in = fine_in;
  c.global_in = global_in;
  std::uniform_int_distribution<std::size_t> heads(1, 4), per(1, 6), ex(1, 8);
  c.heads = heads(rng);
  c.d_h = c.heads * per(rng);
  // LayerNorm over a single feature is constant, which would cut every path
  // from the inputs.
  if (c.d_h == 1) c.d_h = 2 * c.heads;
  c.export_dim = ex(rng);
  c.seed = rng();
  return c;
}

}  // namespace fixtures

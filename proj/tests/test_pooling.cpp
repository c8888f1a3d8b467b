#include <doctest.h>

#include <filesystem>
#include <random>

#include <omp.h>

#include "ctgraph/error.hpp"
#include "ctgraph/pooling.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace ctgraph;

namespace {

std::vector<std::vector<std::int32_t>> singleton_groups(std::int32_t k) {
  std::vector<std::vector<std::int32_t>> g;
  for (std::int32_t l = 1; l <= k; ++l) g.push_back({l});
  return g;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("single pass matches masked-mean oracle and rescan") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const Extents e = fixtures::random_extents(rng, 1, 12);
    std::uniform_int_distribution<std::int32_t> kd(1, 34);
    const std::int32_t k = kd(rng);
    const auto mask = fixtures::random_mask(rng, e, k);
    const auto layer = fixtures::random_layer(rng, e, 5);
    const auto groups = singleton_groups(k);
    const auto assign = RegionAssignment::from_groups(groups);
    const auto fast = mask_pool<double>(layer.data, 5, mask.labels, assign);
    const auto slow = reference::mask_pool_rescan<double>(layer.data, 5, mask.labels, assign);
    REQUIRE(fast.regions == static_cast<std::size_t>(k));
    CHECK(max_abs_diff(fast.means, slow.means) < 1e-12);
    CHECK(fast.counts == slow.counts);
    for (std::int32_t l = 1; l <= k; ++l) {
      const auto ref = oracle::masked_mean(layer.data, 5, mask.labels, {l});
      const auto row = fast.row(static_cast<std::size_t>(l - 1));
      if (ref.empty()) {
        CHECK(fast.counts[static_cast<std::size_t>(l - 1)] == 0);
        for (double v : row) CHECK(v == 0.0);
      } else {
        CHECK(max_abs_diff(row, ref) < 1e-12);
      }
    }
  }
}

TEST_CASE("parallel and serial kernels are bit-identical") {
  std::mt19937_64 rng(12);
  const Extents e{20, 18, 9};
  const auto mask = fixtures::random_mask(rng, e, 34);
  const auto layer = fixtures::random_layer(rng, e, 17);
  const auto groups = singleton_groups(34);
  const auto assign = RegionAssignment::from_groups(groups);
  const auto serial = mask_pool_serial<double>(layer.data, 17, mask.labels, assign);
  for (int threads : {1, 2, 3, 8}) {
    omp_set_num_threads(threads);
    const auto par = mask_pool<double>(layer.data, 17, mask.labels, assign);
    CHECK(par.means == serial.means);
    CHECK(par.counts == serial.counts);
  }
  const std::vector<float> f32(layer.data.begin(), layer.data.end());
  const auto pf = mask_pool<float>(f32, 17, mask.labels, assign);
  CHECK(max_abs_diff(pf.means, serial.means) < 1e-6);
}

TEST_CASE("assignment rejects overlapping groups and ignores unlisted labels") {
  const std::vector<std::vector<std::int32_t>> overlap{{1, 2}, {2}};
  CHECK_THROWS_AS(RegionAssignment::from_groups(overlap), ValidationError);
  const std::vector<std::vector<std::int32_t>> g{{2}};
  const auto a = RegionAssignment::from_groups(g);
  CHECK(a.slot(1) == -1);
  CHECK(a.slot(2) == 0);
  CHECK(a.slot(99) == -1);
  const std::vector<double> feats{1, 2, 3, 4};
  const std::vector<std::int32_t> labels{2, 1, 2, 7};
  const auto p = mask_pool<double>(feats, 1, labels, a);
  CHECK(p.means[0] == 2.0);
  CHECK(p.counts[0] == 2);
}

TEST_CASE("kernel rejects inconsistent sizes") {
  const std::vector<double> feats(10, 0.0);
  const std::vector<std::int32_t> labels(4, 0);
  const std::vector<std::vector<std::int32_t>> g{{1}};
  CHECK_THROWS_AS(mask_pool<double>(feats, 2, labels, RegionAssignment::from_groups(g)), DimensionError);
  FeatureLayer layer({2, 2, 2}, 1);
  CHECK_THROWS_AS(mask_pool_layer(layer, LabelMask3D({2, 2, 1}, 1), RegionAssignment::from_groups(g)),
                  DimensionError);
}

TEST_CASE("pool_all matches oracles per layer") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 15; ++trial) {
    const auto h = fixtures::random_hierarchy(rng, 10, 4);
    // Large enough that the last layer still covers the 4x4x2 grid.
    std::uniform_int_distribution<std::size_t> hw(16, 22), dd(8, 12);
    const Extents e{hw(rng), hw(rng), dd(rng)};
    const auto pyr = fixtures::random_pyramid(rng, e, 3, 4);
    const auto mask = fixtures::random_mask(rng, e, h.max_label());
    const PooledFeatures pf = pool_all(pyr, mask, h);
    REQUIRE(pf.fine.regions() == h.fine().size());
    REQUIRE(pf.coarse.regions() == h.coarse().size());
    for (std::size_t l = 0; l < pyr.layers.size(); ++l) {
      const auto& L = pyr.layers[l];
      const auto m = oracle::resize_nearest(mask.labels, e.h, e.w, e.d, L.extents.h, L.extents.w, L.extents.d);
      for (std::size_t r = 0; r < h.fine().size(); ++r) {
        const auto ref = oracle::masked_mean(L.data, L.channels, m, {h.fine()[r].label});
        CHECK(bool(pf.fine.layer_valid[r * 3 + l]) == !ref.empty());
        if (!ref.empty()) CHECK(max_abs_diff(pf.fine.layer_vector(r, l), ref) < 1e-12);
      }
      for (std::size_t c = 0; c < h.coarse().size(); ++c) {
        const auto ref = oracle::masked_mean(L.data, L.channels, m, h.coarse_labels(c));
        CHECK(bool(pf.coarse.layer_valid[c * 3 + l]) == !ref.empty());
        if (!ref.empty()) CHECK(max_abs_diff(pf.coarse.layer_vector(c, l), ref) < 1e-12);
      }
      const auto gap = oracle::masked_mean(L.data, L.channels, std::vector<std::int32_t>(m.size(), 0), {0});
      CHECK(max_abs_diff(std::span<const double>(pf.global_mean).subspan(pf.fine.layer_offset(l), L.channels),
                         gap) < 1e-12);
    }
    const auto& last = pyr.last();
    const auto grid = oracle::adaptive_pool(last.data, last.channels, last.extents.h, last.extents.w,
                                            last.extents.d, 4, 4, 2);
    CHECK(pf.global.grid.shape() == Shape{4, 4, 2, last.channels});
    CHECK(max_abs_diff(pf.global.flat(), grid) < 1e-12);
  }
}

TEST_CASE("coarse features are the count-weighted mean of disjoint children") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = fixtures::random_hierarchy(rng, 12, 4);
    std::uniform_int_distribution<std::size_t> hw(4, 10), dd(2, 10);
    const Extents e{hw(rng), hw(rng), dd(rng)};
    FeaturePyramid pyr;
    pyr.layers.push_back(fixtures::random_layer(rng, e, 6));
    const auto mask = fixtures::random_mask(rng, e, h.max_label());
    const PooledFeatures pf = pool_all(pyr, mask, h);
    // A coarse region's own label counts as one more disjoint child.
    for (std::size_t c = 0; c < h.coarse().size(); ++c) {
      std::vector<double> acc(6, 0.0);
      double total = 0;
      for (std::int32_t lab : h.coarse_labels(c)) {
        const auto mean = oracle::masked_mean(pyr.layers[0].data, 6, mask.labels, {lab});
        if (mean.empty()) continue;
        const double n = double(std::count(mask.labels.begin(), mask.labels.end(), lab));
        for (std::size_t k = 0; k < 6; ++k) acc[k] += n * mean[k];
        total += n;
      }
      CHECK(pf.coarse.voxel_counts[c] == static_cast<std::int64_t>(total));
      if (total == 0) continue;
      for (auto& v : acc) v /= total;
      CHECK(max_abs_diff(pf.coarse.region(c), acc) < 1e-9);
    }
  }
}

TEST_CASE("adaptive pool kernels agree with floor partition") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> hw(4, 11), dd(2, 11);
    const Extents e{hw(rng), hw(rng), dd(rng)};
    const auto layer = fixtures::random_layer(rng, e, 3);
    const Tensor t = adaptive_avg_pool(layer);
    const auto ref = oracle::adaptive_pool(layer.data, 3, e.h, e.w, e.d, 4, 4, 2);
    CHECK(max_abs_diff(t.storage(), ref) < 1e-12);
    CHECK(max_abs_diff(reference::adaptive_avg_pool(layer, kGlobalGrid), ref) < 1e-12);
  }
}

TEST_CASE("fuse_layers concatenates and checks lengths") {
  const std::vector<std::vector<double>> parts{{1, 2}, {3}};
  const std::vector<std::size_t> ch{2, 1};
  CHECK(fuse_layers(parts, ch) == std::vector<double>{1, 2, 3});
  const std::vector<std::size_t> bad{2, 2};
  CHECK_THROWS_AS(fuse_layers(parts, bad), DimensionError);
}

TEST_CASE("pooled features round trip through a container") {
  std::mt19937_64 rng(16);
  const auto h = fixtures::random_hierarchy(rng, 6, 3);
  const Extents e{8, 8, 4};
  const auto pyr = fixtures::random_pyramid(rng, e, 2, 3);
  const auto pf = pool_all(pyr, fixtures::random_mask(rng, e, h.max_label()), h);
  const auto path = std::filesystem::temp_directory_path() / "ctgraph_test_pooled.bin";
  pf.save(path);
  const auto back = PooledFeatures::load(path);
  CHECK(back.fine.fused == pf.fine.fused);
  CHECK(back.fine.layer_valid == pf.fine.layer_valid);
  CHECK(back.coarse.voxel_counts == pf.coarse.voxel_counts);
  CHECK(back.global.grid == pf.global.grid);
  CHECK(back.global_mean == pf.global_mean);
}

TEST_CASE("tape pooling gradients match central differences") {
  std::mt19937_64 rng(17);
  const Extents e{5, 6, 4};
  const auto layer = fixtures::random_layer(rng, e, 3);
  const auto mask = fixtures::random_mask(rng, e, 4);
  const auto groups = singleton_groups(4);
  const auto assign = RegionAssignment::from_groups(groups);
  std::vector<double> x = layer.data;
  std::normal_distribution<double> n;
  std::vector<double> w1(4 * 3), w2(4 * 4 * 2 * 3);
  for (auto& v : w1) v = n(rng);
  for (auto& v : w2) v = n(rng);
  auto loss = [&](ad::Tape& tape, const ad::Var& in) {
    const ad::Var a = ad::mask_pool(in, mask.labels, assign);
    const ad::Var b = ad::adaptive_avg_pool(in, e);
    return ad::add(ad::sum(ad::mul(a, tape.constant(Tensor({4, 3}, w1)))),
                   ad::sum(ad::mul(b, tape.constant(Tensor({1, w2.size()}, w2)))));
  };
  ad::Tape tape;
  const ad::Var in = tape.input(Tensor({3, e.voxels()}, x));
  tape.backward(loss(tape, in));
  const Tensor g = tape.grad(in);
  auto f = [&] {
    ad::Tape t;
    return loss(t, t.input(Tensor({3, e.voxels()}, x))).value()[0];
  };
  const auto num = oracle::numeric_grad(f, x);
  CHECK(oracle::max_rel_error(g.storage(), num) < 1e-4);
}

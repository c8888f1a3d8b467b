// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [criterion numbers...]   (all ten when none are given)
//
// Criterion 8 reads data/benchmark.json and criterion 10 runs data/demo.json;
// CTGRAPH_DATA_DIR overrides the compiled-in data directory.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "ctgraph/json_io.hpp"
#include "ctgraph/logging.hpp"
#include "ctgraph/metrics.hpp"
#include "ctgraph/pipeline.hpp"
#include "fixtures.hpp"
#include "gat_oracle.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace ctgraph;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path data_dir() {
  if (const char* env = std::getenv("CTGRAPH_DATA_DIR")) return env;
  return CTGRAPH_DATA_DIR;
}

// 1: single-pass pooling vs the per-label rescan on random pyramids.
Outcome pooling_oracle() {
  std::mt19937_64 rng(1001);
  const auto t0 = Clock::now();
  double worst = 0;
  bool counts_ok = true;
  std::size_t instances = 0, layers = 0;
  for (; instances < 120; ++instances) {
    const Extents e = fixtures::random_extents(rng, 2, 32);
    std::uniform_int_distribution<std::int32_t> kd(1, 34);
    std::uniform_int_distribution<std::size_t> nl(1, 3), ch(1, 8);
    const std::int32_t k = kd(rng);
    const auto mask = fixtures::random_mask(rng, e, k);
    const auto pyr = fixtures::random_pyramid(rng, e, nl(rng), ch(rng));
    std::vector<std::vector<std::int32_t>> groups;
    for (std::int32_t l = 1; l <= k; ++l) groups.push_back({l});
    const auto assign = RegionAssignment::from_groups(groups);
    for (const auto& layer : pyr.layers) {
      const auto m = resize_mask_nearest(mask, layer.extents);
      const auto fast = mask_pool_layer(layer, m, assign);
      const auto slow = reference::mask_pool_rescan<double>(layer.data, layer.channels, m.labels, assign);
      worst = std::max(worst, max_abs_diff(fast.means, slow.means));
      counts_ok &= fast.counts == slow.counts;
      ++layers;
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && counts_ok && t < 10.0,
          fmt("%zu instances, %zu layers, max |diff| %.3g, counts %s, %.2f s", instances, layers, worst,
              counts_ok ? "equal" : "DIFFER", t)};
}

// 2: coarse features are the voxel-count-weighted mean of their disjoint parts.
Outcome union_identity() {
  std::mt19937_64 rng(1002);
  double worst = 0;
  bool counts_ok = true;
  std::size_t hierarchies = 0;
  for (; hierarchies < 60; ++hierarchies) {
    const auto h = fixtures::random_hierarchy(rng, 34, 8);
    std::uniform_int_distribution<std::size_t> hw(16, 24), dd(8, 12);
    const Extents e{hw(rng), hw(rng), dd(rng)};
    const auto pyr = fixtures::random_pyramid(rng, e, 2, 3);
    const auto mask = fixtures::random_mask(rng, e, h.max_label());
    const PooledFeatures pf = pool_all(pyr, mask, h);
    const std::size_t L = pyr.layers.size();
    for (std::size_t l = 0; l < L; ++l) {
      const auto& layer = pyr.layers[l];
      const auto m = resize_mask_nearest(mask, layer.extents);
      for (std::size_t c = 0; c < h.coarse().size(); ++c) {
        std::vector<double> acc(layer.channels, 0.0);
        double total = 0;
        std::set<std::int32_t> child_labels;
        for (std::size_t r = 0; r < h.fine().size(); ++r) {
          if (h.coarse_position(h.fine()[r].parent) != c) continue;
          child_labels.insert(h.fine()[r].label);
          const double n = static_cast<double>(pf.fine.voxel_counts[r * L + l]);
          const auto v = pf.fine.layer_vector(r, l);
          for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n * v[k];
          total += n;
        }
        // The coarse node's own label, when it has one, is one more disjoint part.
        for (std::int32_t lab : h.coarse_labels(c)) {
          if (child_labels.count(lab)) continue;
          const auto mean = oracle::masked_mean(layer.data, layer.channels, m.labels, {lab});
          if (mean.empty()) continue;
          const double n = static_cast<double>(std::count(m.labels.begin(), m.labels.end(), lab));
          for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n * mean[k];
          total += n;
        }
        counts_ok &= pf.coarse.voxel_counts[c * L + l] == static_cast<std::int64_t>(total);
        if (total == 0) continue;
        for (auto& v : acc) v /= total;
        worst = std::max(worst, max_abs_diff(pf.coarse.layer_vector(c, l), acc));
      }
    }
  }
  return {worst <= 1e-9 && counts_ok,
          fmt("%zu hierarchies, max |diff| %.3g, counts %s", hierarchies, worst, counts_ok ? "equal" : "DIFFER")};
}

struct Instance {
  AnatomyHierarchy h;
  RegionGraph graph;
  PooledFeatures pooled;
  GatModel model;
};

Instance random_instance(std::mt19937_64& rng, Topology t, double invalid_prob = 0.15) {
  Instance in;
  in.h = fixtures::random_hierarchy(rng, 12, 5);
  in.graph = build_graph(in.h, t, rng());
  std::uniform_int_distribution<std::size_t> ch(1, 4);
  const std::vector<std::size_t> channels{ch(rng), ch(rng)};
  const std::size_t gch = ch(rng);
  in.pooled = fixtures::random_pooled(rng, in.h.fine().size(), in.h.coarse().size(), channels, gch, invalid_prob);
  in.model = GatModel::init(fixtures::small_gat_config(rng, channels[0] + channels[1], 32 * gch));
  fixtures::jitter_parameters(in.model.parameters(), rng, 0.3);
  return in;
}

GatOutputs forward(ad::Tape& tape, Instance& in) {
  return gat_forward(tape, as_constants(tape, in.pooled), in.graph, in.model);
}

// 3: every attention group sums to one.
Outcome attention_normalization() {
  std::mt19937_64 rng(1003);
  double worst = 0;
  std::size_t groups = 0, passes = 0;
  for (; passes < 1200; ++passes) {
    Instance in = random_instance(rng, static_cast<Topology>(passes % 3), passes % 4 == 0 ? 0.5 : 0.15);
    ad::Tape tape;
    const GatOutputs out = forward(tape, in);
    for (const auto& g : out.alphas) {
      double s = 0;
      for (double a : g.alpha) s += a;
      worst = std::max(worst, std::abs(s - 1.0));
      ++groups;
    }
  }
  return {worst <= 1e-6 && groups > 0,
          fmt("%zu forward passes, %zu (node, head) groups, max |sum - 1| %.3g", passes, groups, worst)};
}

// 4: both stages against the explicit-loop transcription.
Outcome transcription() {
  std::mt19937_64 rng(1004);
  double worst = 0;
  bool structure_ok = true;
  std::size_t instances = 0;
  for (; instances < 120; ++instances) {
    Instance in = random_instance(rng, instances % 2 ? Topology::random : Topology::hierarchical);
    ad::Tape tape;
    const GatOutputs out = forward(tape, in);
    const auto ref = oracle::two_stage(in.pooled, in.graph, in.model);
    const Tensor& hc = out.coarse_updated.value();
    for (std::size_t c = 0; c < ref.h_c_new.size(); ++c)
      worst = std::max(worst, max_abs_diff(std::span<const double>(hc.storage()).subspan(c * hc.cols(), hc.cols()),
                                           ref.h_c_new[c]));
    worst = std::max(worst, max_abs_diff(out.global_updated.value().storage(), ref.h_g_new));
    structure_ok &= out.alphas.size() == ref.alphas.size();
    for (const auto& want : ref.alphas) {
      const auto got = std::find_if(out.alphas.begin(), out.alphas.end(), [&](const AlphaGroup& g) {
        return g.stage == want.stage && g.target == want.target && g.head == want.head;
      });
      if (got == out.alphas.end() || got->members.size() != want.members.size()) {
        structure_ok = false;
        continue;
      }
      for (std::size_t m = 0; m < want.members.size(); ++m) {
        const auto pos = std::find(got->members.begin(), got->members.end(), want.members[m]);
        if (pos == got->members.end()) {
          structure_ok = false;
          continue;
        }
        worst = std::max(worst, std::abs(got->alpha[static_cast<std::size_t>(pos - got->members.begin())] -
                                         want.alpha[m]));
      }
    }
  }
  return {worst <= 1e-10 && structure_ok,
          fmt("%zu instances, max |diff| %.3g, groups %s", instances, worst, structure_ok ? "match" : "DIFFER")};
}

// 5: end-to-end gradients vs central differences.
Outcome gradients() {
  std::mt19937_64 rng(1005);
  double worst = 0;
  std::size_t entries = 0;
  std::map<std::string, int> topologies;
  const int configs = 12;
  for (int i = 0; i < configs; ++i) {
    const auto r = gradcheck::end_to_end(rng);
    worst = std::max(worst, r.max_rel_error);
    entries += r.entries;
    ++topologies[r.topology];
  }
  std::string topo;
  for (const auto& [k, v] : topologies) topo += (topo.empty() ? "" : ", ") + k + " " + std::to_string(v);
  return {worst < 1e-4, fmt("%d configs (%s), %zu entries, max rel error %.3g", configs, topo.c_str(), entries, worst)};
}

// 6: node, edge and token counts of the default table.
Outcome structural_counts() {
  const auto& h = default_hierarchy();
  const RegionGraph g = build_hierarchical(h);
  std::size_t fc = 0, cg = 0;
  for (const auto& [s, t] : g.edges) {
    fc += g.nodes[s].level == NodeLevel::fine && g.nodes[t].level == NodeLevel::coarse;
    cg += g.nodes[s].level == NodeLevel::coarse && g.nodes[t].level == NodeLevel::global;
  }
  std::mt19937_64 rng(1006);
  auto pooled = fixtures::random_pooled(rng, h.fine().size(), h.coarse().size(), {3, 2}, 2, 0.0);
  GatModel model = GatModel::init(fixtures::small_gat_config(rng, 5, 64));
  const std::size_t tokens = infer_tokens(pooled, g, model).rows();
  const std::size_t single = infer_tokens(pooled, build_single_level(h), model).rows();
  const bool ok = g.num_fine() == 34 && g.num_coarse() == 8 && g.nodes.size() == 43 && fc == 34 && cg == 8 &&
                  g.edges.size() == 42 && tokens == 43 && single == 35;
  return {ok, fmt("fine %zu, coarse %zu, global 1, E_fc %zu, E_cg %zu, tokens %zu, single-level tokens %zu",
                  g.num_fine(), g.num_coarse(), fc, cg, tokens, single)};
}

// 7: permutation invariance of stage 1 and locality of fine perturbations.
Outcome invariants() {
  std::mt19937_64 rng(1007);
  std::size_t perm_trials = 0, perm_fail = 0, loc_trials = 0, loc_fail = 0;
  double perm_worst = 0;
  while (perm_trials < 120) {
    Instance in = random_instance(rng, Topology::hierarchical, 0.0);
    std::vector<std::size_t> pair;
    for (std::size_t a = 0; a < in.h.fine().size() && pair.empty(); ++a)
      for (std::size_t b = a + 1; b < in.h.fine().size(); ++b)
        if (in.h.fine()[a].parent == in.h.fine()[b].parent) {
          pair = {a, b};
          break;
        }
    if (pair.empty()) continue;
    ++perm_trials;
    ad::Tape t1;
    const GatOutputs before = forward(t1, in);
    Tensor& f = in.pooled.fine.fused;
    for (std::size_t c = 0; c < f.cols(); ++c) std::swap(f.at(pair[0], c), f.at(pair[1], c));
    std::shuffle(in.graph.edges.begin(), in.graph.edges.end(), rng);
    ad::Tape t2;
    const GatOutputs after = forward(t2, in);
    const double d = std::max(max_abs_diff(before.coarse_updated.value().storage(), after.coarse_updated.value().storage()),
                              max_abs_diff(before.global_updated.value().storage(), after.global_updated.value().storage()));
    perm_worst = std::max(perm_worst, d);
    perm_fail += d > 1e-9;
  }
  for (; loc_trials < 120; ++loc_trials) {
    Instance in = random_instance(rng, Topology::hierarchical, 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, in.h.fine().size() - 1);
    const std::size_t v = pick(rng);
    const std::size_t parent = in.h.coarse_position(in.h.fine()[v].parent);
    ad::Tape t1;
    const GatOutputs a = forward(t1, in);
    for (std::size_t c = 0; c < in.pooled.fine.fused.cols(); ++c) in.pooled.fine.fused.at(v, c) += 0.5;
    ad::Tape t2;
    const GatOutputs b = forward(t2, in);
    const Tensor &ha = a.coarse_updated.value(), &hb = b.coarse_updated.value();
    bool ok = !(a.global_updated.value() == b.global_updated.value());
    for (std::size_t c = 0; c < ha.rows(); ++c) {
      bool same = true;
      for (std::size_t j = 0; j < ha.cols(); ++j) same &= ha.at(c, j) == hb.at(c, j);
      ok &= same == (c != parent);
    }
    loc_fail += !ok;
  }
  return {perm_fail == 0 && loc_fail == 0,
          fmt("permutation %zu trials (%zu failed, max |diff| %.3g), locality %zu trials (%zu failed)", perm_trials,
              perm_fail, perm_worst, loc_trials, loc_fail)};
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string per_seed(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.3f", x);
  return s;
}

// 8: direction-of-effect trends on the phantom benchmark.
Outcome benchmark_trends() {
  const fs::path path = data_dir() / "benchmark.json";
  const auto j = read_json_file(path, "benchmark config");
  const PipelineConfig cfg = PipelineConfig::from_json(j, path.parent_path());
  const auto& b = j.at("benchmark");
  const auto seeds = b.at("seeds").get<std::vector<std::uint64_t>>();
  const std::string fine = b.at("fine"), global = b.at("global"), fused = b.at("fused");
  const auto singles = b.at("single_layers").get<std::vector<std::string>>();

  const auto t0 = Clock::now();
  std::map<std::string, std::vector<double>> f1;
  for (const auto seed : seeds) {
    const PhantomDataset ds = build_dataset(cfg, seed);
    std::set<std::string> probes{fine, global, fused};
    probes.insert(singles.begin(), singles.end());
    for (const auto& name : probes) {
      TrainConfig tc = cfg.probe_train;
      tc.seed = seed;
      f1["probe " + name].push_back(train_probe(probe_dataset(ds, ProbeFeatureSpec::parse(name)), tc).result.final().f1);
    }
    const GatDataset gd = gat_dataset(ds);
    GatConfig gc = cfg.gat_model;
    const GatConfig shape = gat_config_for(ds.features.front());
    gc.fine_in = shape.fine_in;
    gc.global_in = shape.global_in;
    for (const auto topo : {Topology::hierarchical, Topology::random}) {
      TrainConfig tc = cfg.gat_train;
      tc.seed = seed;
      const RegionGraph g = build_graph(ds.hierarchy, topo, seed);
      f1["gat " + to_string(topo)].push_back(train_gat_classifier(gd, g, gc, tc).result.final().f1);
    }
  }
  const double t = seconds_since(t0);

  const double m_fine = mean(f1["probe " + fine]), m_global = mean(f1["probe " + global]);
  const double m_fused = mean(f1["probe " + fused]);
  std::string best_single;
  double m_best = -1;
  for (const auto& s : singles)
    if (mean(f1["probe " + s]) > m_best) m_best = mean(f1["probe " + s]), best_single = s;
  const double m_hier = mean(f1["gat hierarchical"]), m_rand = mean(f1["gat random"]);

  const bool granularity = m_fine >= m_global, fusion = m_fused >= m_best, topology = m_hier >= m_rand;
  std::ostringstream d;
  d << seeds.size() << " seeds, " << fmt("%.0f s", t) << "; "
    << fmt("fine %.3f >= global %.3f [%s]", m_fine, m_global, granularity ? "ok" : "no") << " ("
    << per_seed(f1["probe " + fine]) << " vs " << per_seed(f1["probe " + global]) << "); "
    << fmt("fused %.3f >= best single %s %.3f [%s]", m_fused, best_single.c_str(), m_best, fusion ? "ok" : "no")
    << " (" << per_seed(f1["probe " + fused]) << " vs " << per_seed(f1["probe " + best_single]) << "); "
    << fmt("hierarchical %.3f >= random %.3f [%s]", m_hier, m_rand, topology ? "ok" : "no") << " ("
    << per_seed(f1["gat hierarchical"]) << " vs " << per_seed(f1["gat random"]) << ")";
  return {granularity && fusion && topology && t < 1800.0, d.str()};
}

// 9: metric golden values.
Outcome metric_goldens() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* name) {
    if (!ok) failed.push_back(name);
  };
  const LabelMatrix pred{{1, 1}, {0, 1}, {1, 0}, {0, 0}}, ref{{1, 1}, {0, 0}, {1, 1}, {0, 0}};
  const PRF1 m = macro_prf1(pred, ref);
  expect(m.f1 == 0.75 && m.precision == 0.75 && m.recall == 0.75, "macro F1 hand case");
  const PRF1 same = macro_prf1(ref, ref);
  expect(same.precision == 1 && same.recall == 1 && same.f1 == 1, "macro pred == ref");
  const PRF1 zero = macro_prf1(LabelMatrix(4, {0, 0}), ref);
  expect(zero.recall == 0 && zero.f1 == 0, "macro all-zero prediction");

  const BleuResult b = bleu({tokenize("a a a")}, {tokenize("a b")});
  expect(b.bleu[0] == 1.0 / 3.0 && b.brevity_penalty == 1.0, "BLEU-1 clipped 1/3");
  const BleuResult s = bleu({tokenize("a b")}, {tokenize("a b c d")});
  expect(s.bleu[0] == std::exp(1.0 - 4.0 / 2.0), "BLEU-1 short candidate");
  const BleuResult id = bleu({tokenize("the heart is normal in size")}, {tokenize("the heart is normal in size")});
  bool ones = true;
  for (double v : id.bleu) ones &= std::abs(v - 1.0) <= 1e-12;
  expect(ones, "BLEU identical");
  const BleuResult dj = bleu({tokenize("x y z w")}, {tokenize("a b c d")});
  expect(std::all_of(dj.bleu.begin(), dj.bleu.end(), [](double v) { return v == 0.0; }), "BLEU disjoint");

  const double P = 0.75, R = 1.0, b2 = 1.44;
  const double want = (1 + b2) * P * R / (R + b2 * P);
  expect(std::abs(rouge_l({tokenize("a b c d")}, {tokenize("a c d")}).f - want) <= 1e-12, "ROUGE-L LCS 3");
  expect(lcs_length(tokenize("a b c d"), tokenize("a c d")) == 3, "LCS length");
  bool rouge_id = true;
  for (double beta : {0.5, 1.0, 1.2, 3.0})
    rouge_id &= std::abs(rouge_l({tokenize("left lower lobe")}, {tokenize("left lower lobe")}, beta).f - 1.0) <= 1e-12;
  expect(rouge_id, "ROUGE-L identical");
  expect(rouge_l({tokenize("a b")}, {tokenize("c d")}).f == 0.0, "ROUGE-L disjoint");
  const RougeResult e = rouge_l({Tokens{}}, {Tokens{}});
  expect(e.f == 0.0 && e.both_empty.size() == 1, "ROUGE-L both empty");

  std::string d = "13 cases";
  for (const auto& f : failed) d += "; FAILED " + f;
  return {failed.empty(), d};
}

// 10: pooling throughput and demo wall time.
Outcome performance() {
  std::mt19937_64 rng(1010);
  const Extents e{128, 128, 64};
  const auto mask = fixtures::random_mask(rng, e, 34, false);
  const auto layer = fixtures::random_layer(rng, e, 48);
  std::vector<std::vector<std::int32_t>> groups;
  for (std::int32_t l = 1; l <= 34; ++l) groups.push_back({l});
  const auto assign = RegionAssignment::from_groups(groups);
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  double best = INFINITY;
  for (int rep = 0; rep < 3; ++rep) {
    const auto t0 = Clock::now();
    const auto p = mask_pool_layer(layer, mask, assign);
    best = std::min(best, seconds_since(t0));
    if (p.regions != 34) best = INFINITY;
  }
  omp_set_num_threads(threads);

  const fs::path demo = data_dir() / "demo.json";
  PipelineConfig cfg = PipelineConfig::load(demo);
  cfg.out_dir = fs::temp_directory_path() / "ctgraph_acceptance_demo";
  fs::remove_all(cfg.out_dir);
  const auto t0 = Clock::now();
  run_pipeline(cfg);
  const double demo_s = seconds_since(t0);
  return {best < 2.0 && demo_s < 300.0,
          fmt("pooling 128x128x64x48, 34 labels, 1 thread: %.3f s (best of 3); demo pipeline %.1f s", best, demo_s)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"pooling oracle equivalence", pooling_oracle},
      {"union-pooling identity", union_identity},
      {"attention normalization", attention_normalization},
      {"transcription oracle", transcription},
      {"gradient checks", gradients},
      {"structural counts", structural_counts},
      {"permutation and locality invariants", invariants},
      {"benchmark trends", benchmark_trends},
      {"metric golden values", metric_goldens},
      {"performance gate", performance},
  };
  Logger::instance().set_level(LogLevel::warn);
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(n)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %s: %s (%.1f s) - %s\n", n, o.pass ? "PASS" : "FAIL", criteria[i].first,
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

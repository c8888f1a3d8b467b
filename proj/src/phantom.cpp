#include "ctgraph/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"
#include "ctgraph/nn.hpp"

namespace ctgraph {

void PhantomSpec::validate() const {
  if (!extents.positive()) throw ValidationError("phantom extents must be positive");
  if (regions.empty()) throw ValidationError("phantom spec has no regions");
  std::set<std::int32_t> labels;
  std::int32_t kmax = 0;
  for (const auto& r : regions) {
    if (r.label <= 0) throw ValidationError("phantom region label must be positive");
    if (!labels.insert(r.label).second)
      throw ValidationError("phantom region label " + std::to_string(r.label) + " listed twice");
    kmax = std::max(kmax, r.label);
    const double lim[3] = {double(extents.h), double(extents.w), double(extents.d)};
    for (int a = 0; a < 3; ++a) {
      if (!(r.center[a] >= 0.0 && r.center[a] < lim[a]))
        throw ValidationError("phantom region " + std::to_string(r.label) +
                              " centre lies outside extents " + extents.str());
      if (!(r.radii[a] > 0.0))
        throw ValidationError("phantom region " + std::to_string(r.label) + " has a non-positive radius");
    }
  }
  if (num_labels != 0 && num_labels < kmax)
    throw ValidationError("phantom num_labels " + std::to_string(num_labels) +
                          " is below the largest region label " + std::to_string(kmax));
  for (const auto& p : pathologies) {
    if (p.hosts.empty()) throw ValidationError("pathology '" + p.name + "' has no host label");
    for (auto l : p.hosts)
      if (!labels.count(l))
        throw ValidationError("pathology '" + p.name + "' hosted by unknown label " + std::to_string(l));
    if (!(p.prevalence >= 0.0 && p.prevalence <= 1.0))
      throw ValidationError("pathology '" + p.name + "' prevalence outside [0,1]");
    if (!p.diffuse && !(p.radius > 0.0)) throw ValidationError("pathology '" + p.name + "' radius must be positive");
  }
  if (noise_sigma < 0.0 || intensity_jitter < 0.0)
    throw ValidationError("phantom noise parameters must be non-negative");
}

nlohmann::json PhantomSpec::to_json() const {
  nlohmann::json j;
  j["extents"] = {extents.h, extents.w, extents.d};
  j["regions"] = nlohmann::json::array();
  for (const auto& r : regions)
    j["regions"].push_back(
        {{"label", r.label}, {"center", r.center}, {"radii", r.radii}, {"intensity", r.intensity}});
  j["pathologies"] = nlohmann::json::array();
  for (const auto& p : pathologies)
    j["pathologies"].push_back({{"name", p.name},
                                {"host_labels", p.hosts},
                                {"delta", p.delta},
                                {"prevalence", p.prevalence},
                                {"radius", p.radius},
                                {"diffuse", p.diffuse}});
  j["noise_sigma"] = noise_sigma;
  j["intensity_jitter"] = intensity_jitter;
  j["num_labels"] = num_labels;
  j["seed"] = seed;
  return j;
}

PhantomSpec PhantomSpec::from_json(const nlohmann::json& j) {
  PhantomSpec s;
  try {
    const auto e = j.at("extents").get<std::vector<std::size_t>>();
    if (e.size() != 3) throw FormatError("phantom extents must have three entries");
    s.extents = {e[0], e[1], e[2]};
    for (const auto& r : j.at("regions"))
      s.regions.push_back({r.at("label").get<std::int32_t>(),
                           r.at("center").get<std::array<double, 3>>(),
                           r.at("radii").get<std::array<double, 3>>(),
                           r.at("intensity").get<double>()});
    if (j.contains("pathologies"))
      for (const auto& p : j["pathologies"]) {
        // "host_label" (one label) is accepted as shorthand for "host_labels".
        std::vector<std::int32_t> hosts;
        if (p.contains("host_labels")) hosts = p["host_labels"].get<std::vector<std::int32_t>>();
        else hosts = {p.at("host_label").get<std::int32_t>()};
        s.pathologies.push_back({p.at("name").get<std::string>(), std::move(hosts), p.at("delta").get<double>(),
                                 p.at("prevalence").get<double>(), p.value("radius", 1.0),
                                 p.value("diffuse", false)});
      }
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.intensity_jitter = j.value("intensity_jitter", 0.0);
    s.num_labels = j.value("num_labels", 0);
    s.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

PhantomSpec PhantomSpec::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path, "phantom spec"));
}

void PhantomSpec::save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t index) {
  return mix_seed(base_seed, 1000 + index);
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Extents e = spec.extents;
  std::int32_t k = spec.num_labels;
  for (const auto& r : spec.regions) k = std::max(k, r.label);

  Phantom out{Volume3D(e, 0.0), LabelMask3D(e, k), {}};

  std::mt19937_64 jitter_rng(mix_seed(spec.seed, 1));
  std::mt19937_64 noise_rng(mix_seed(spec.seed, 2));
  std::mt19937_64 lesion_rng(mix_seed(spec.seed, 3));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (const auto& r : spec.regions) {
    const double value = r.intensity + spec.intensity_jitter * normal(jitter_rng);
    auto lo = [&](int a, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(std::ceil(r.center[a] - r.radii[a]), 0.0, double(n - 1)));
    };
    auto hi = [&](int a, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(std::floor(r.center[a] + r.radii[a]), 0.0, double(n - 1)));
    };
    for (std::size_t i = lo(0, e.h); i <= hi(0, e.h); ++i)
      for (std::size_t j = lo(1, e.w); j <= hi(1, e.w); ++j)
        for (std::size_t t = lo(2, e.d); t <= hi(2, e.d); ++t) {
          const double di = (double(i) - r.center[0]) / r.radii[0];
          const double dj = (double(j) - r.center[1]) / r.radii[1];
          const double dt = (double(t) - r.center[2]) / r.radii[2];
          if (di * di + dj * dj + dt * dt > 1.0) continue;
          out.mask.at(i, j, t) = r.label;
          out.volume.at(i, j, t) = value;
        }
  }

  const auto hist = out.mask.histogram();
  for (const auto& r : spec.regions)
    if (hist[static_cast<std::size_t>(r.label)] == 0)
      throw ValidationError("phantom region " + std::to_string(r.label) +
                            " covers no voxels (too small or fully overwritten)");

  if (spec.noise_sigma > 0.0)
    for (double& v : out.volume.voxels) v += spec.noise_sigma * normal(noise_rng);

  for (const auto& p : spec.pathologies) {
    const double u = unit(lesion_rng);
    const double pick = unit(lesion_rng);
    const bool positive = u < p.prevalence;
    out.targets.push_back(positive ? 1.0 : 0.0);
    if (!positive) continue;
    std::vector<std::size_t> host;
    for (std::size_t v = 0; v < out.mask.labels.size(); ++v)
      if (std::find(p.hosts.begin(), p.hosts.end(), out.mask.labels[v]) != p.hosts.end()) host.push_back(v);
    if (p.diffuse) {
      for (std::size_t v : host) out.volume.voxels[v] += p.delta;
      continue;
    }
    const std::size_t c = host[std::min(host.size() - 1, static_cast<std::size_t>(pick * double(host.size())))];
    const double ci = double(c / (e.w * e.d)), cj = double((c / e.d) % e.w), ct = double(c % e.d);
    for (std::size_t v : host) {
      const double di = double(v / (e.w * e.d)) - ci;
      const double dj = double((v / e.d) % e.w) - cj;
      const double dt = double(v % e.d) - ct;
      if (di * di + dj * dj + dt * dt <= p.radius * p.radius) out.volume.voxels[v] += p.delta;
    }
  }
  return out;
}

PhantomSpec default_phantom_spec(const AnatomyHierarchy& h, Extents extents, std::uint64_t seed) {
  std::vector<std::pair<std::int32_t, std::string>> labelled;
  for (const auto& f : h.fine()) labelled.emplace_back(f.label, f.name);
  for (const auto& c : h.coarse())
    if (c.label) labelled.emplace_back(*c.label, c.name);
  std::sort(labelled.begin(), labelled.end());

  // Smallest grid with gh * gw * gd >= n, aspect following the extents.
  const std::size_t n = labelled.size();
  std::size_t gh = 1, gw = 1, gd = 1;
  while (gh * gw * gd < n) {
    const double ch = double(extents.h) / double(gh), cw = double(extents.w) / double(gw),
                 cd = double(extents.d) / double(gd);
    if (ch >= cw && ch >= cd) ++gh;
    else if (cw >= cd) ++gw;
    else ++gd;
  }
  const double ch = double(extents.h) / double(gh), cw = double(extents.w) / double(gw),
               cd = double(extents.d) / double(gd);

  PhantomSpec s;
  s.extents = extents;
  s.seed = seed;
  s.noise_sigma = 0.1;
  s.intensity_jitter = 0.1;
  s.num_labels = h.max_label();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k / (gw * gd), b = (k / gd) % gw, c = k % gd;
    const double shrink = 0.34 + 0.08 * double((k * 7) % 4) / 3.0;
    PhantomRegion r;
    r.label = labelled[k].first;
    r.center = {(double(a) + 0.5) * ch, (double(b) + 0.5) * cw, (double(c) + 0.5) * cd};
    r.radii = {std::max(0.75, shrink * ch), std::max(0.75, shrink * cw), std::max(0.75, shrink * cd)};
    r.intensity = 0.2 + 0.8 * double((k * 13) % n) / double(n);
    s.regions.push_back(r);
  }

  // Labels of the named organ system; other hierarchies fall back to a
  // name-hashed labelled region.
  auto system_of = [&](const std::string& coarse_name) {
    for (std::size_t c = 0; c < h.coarse().size(); ++c)
      if (h.coarse()[c].name == coarse_name && !h.coarse_labels(c).empty()) return h.coarse_labels(c);
    return std::vector<std::int32_t>{labelled[std::hash<std::string>{}(coarse_name) % n].first};
  };
  const double unit = std::min({ch, cw, cd});
  // One focal lesion type per organ system, all with the same contrast: the
  // class is identified by which system holds the lesion, not by its look.
  const double r = std::max(1.0, 0.3 * unit);
  s.pathologies = {
      {"lung_nodule", system_of("lungs"), 0.8, 0.35, r},
      {"bone_lesion", system_of("bones"), 0.8, 0.35, r},
      {"abdominal_mass", system_of("abdomen"), 0.8, 0.35, r},
      {"mediastinal_mass", system_of("mediastinum"), 0.8, 0.35, r},
      {"cardiac_mass", system_of("heart"), 0.8, 0.35, r},
      {"thyroid_nodule", system_of("thyroid"), 0.8, 0.35, r},
  };
  return s;
}

}  // namespace ctgraph

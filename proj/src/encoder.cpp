#include "ctgraph/encoder.hpp"

#include <algorithm>
#include <random>
#include <regex>

#include "ctgraph/container.hpp"
#include "ctgraph/error.hpp"
#include "ctgraph/json_io.hpp"
#include "ctgraph/nn.hpp"

namespace ctgraph {

std::size_t EncoderPreset::total_channels() const {
  std::size_t n = 0;
  for (auto c : channels) n += c;
  return n;
}

std::size_t EncoderPreset::cumulative_factor(std::size_t layer) const {
  std::size_t f = 1;
  for (std::size_t l = 0; l <= layer; ++l) f *= factors.at(l);
  return f;
}

void EncoderPreset::validate() const {
  if (channels.empty()) throw ValidationError("preset '" + name + "' has no layers");
  if (channels.size() != factors.size())
    throw ValidationError("preset '" + name + "': " + std::to_string(channels.size()) +
                          " channel entries but " + std::to_string(factors.size()) + " factors");
  for (auto c : channels)
    if (c == 0) throw ValidationError("preset '" + name + "' has a zero channel width");
  for (auto f : factors)
    if (f == 0) throw ValidationError("preset '" + name + "' has a zero downsample factor");
}

nlohmann::json EncoderPreset::to_json() const {
  return {{"name", name}, {"channels", channels}, {"factors", factors}};
}

EncoderPreset EncoderPreset::from_json(const nlohmann::json& j) {
  EncoderPreset p;
  try {
    p.name = j.at("name").get<std::string>();
    p.channels = j.at("channels").get<std::vector<std::size_t>>();
    p.factors = j.at("factors").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed encoder preset: ") + e.what());
  }
  p.validate();
  return p;
}

const std::vector<EncoderPreset>& builtin_presets() {
  static const std::vector<EncoderPreset> presets = {
      {"swinunetr-style", {48, 96, 192, 384, 768}, {2, 2, 2, 2, 2}},
      {"voco-style", {48, 96, 192, 384, 768}, {2, 2, 2, 2, 2}},
      {"vox2vec-style", {16, 32, 64, 128, 256, 512}, {1, 2, 2, 2, 2, 2}},
      {"transvw-style", {64, 128, 256, 512}, {1, 2, 2, 2}},
      {"ct-fm-style", {32, 64, 128, 256, 512}, {1, 2, 2, 2, 2}},
      {"desk-style", {16, 32, 64}, {2, 2, 2}},
  };
  return presets;
}

std::vector<EncoderPreset> load_preset_registry(const std::filesystem::path& path) {
  const auto j = read_json_file(path, "preset registry");
  std::vector<EncoderPreset> out;
  if (!j.contains("presets") || !j["presets"].is_array())
    throw FormatError("preset registry '" + path.string() + "' lacks a 'presets' array");
  for (const auto& e : j["presets"]) out.push_back(EncoderPreset::from_json(e));
  return out;
}

const EncoderPreset& find_preset(const std::string& name, std::span<const EncoderPreset> registry) {
  for (const auto& p : registry)
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : registry) known += (known.empty() ? "" : ", ") + p.name;
  throw ValidationError("unknown encoder preset '" + name + "' (known: " + known + ")");
}

const EncoderPreset& find_preset(const std::string& name) {
  return find_preset(name, builtin_presets());
}

std::vector<std::size_t> FeaturePyramid::channel_list() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) out.push_back(l.channels);
  return out;
}

std::size_t FeaturePyramid::total_channels() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.channels;
  return n;
}

void FeaturePyramid::validate(const EncoderPreset* preset) const {
  if (layers.empty()) throw ValidationError("feature pyramid has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    if (!L.extents.positive() || L.channels == 0)
      throw ValidationError("layer " + std::to_string(l + 1) + " has empty extents or channels");
    if (L.data.size() != L.extents.voxels() * L.channels)
      throw ValidationError("layer " + std::to_string(l + 1) + " data length disagrees with " +
                            std::to_string(L.channels) + "x" + L.extents.str());
    if (l > 0) {
      const auto& P = layers[l - 1].extents;
      if (L.extents.h > P.h || L.extents.w > P.w || L.extents.d > P.d)
        throw ValidationError("layer order violation: layer " + std::to_string(l + 1) + " (" +
                              L.extents.str() + ") is larger than layer " + std::to_string(l) +
                              " (" + P.str() + "); layers must go fine to coarse");
    }
  }
  if (preset && channel_list() != preset->channels)
    throw ValidationError("pyramid channels do not match preset '" + preset->name + "'");
}

namespace {

// Averages non-overlapping f x f x f boxes of a single-channel grid.
std::vector<double> box_average(const std::vector<double>& src, Extents se, std::size_t f, Extents de) {
  std::vector<double> dst(de.voxels(), 0.0);
  const double inv = 1.0 / static_cast<double>(f * f * f);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < de.h; ++i)
    for (std::size_t j = 0; j < de.w; ++j)
      for (std::size_t t = 0; t < de.d; ++t) {
        double acc = 0.0;
        for (std::size_t a = 0; a < f; ++a)
          for (std::size_t b = 0; b < f; ++b)
            for (std::size_t c = 0; c < f; ++c)
              acc += src[se.index(i * f + a, j * f + b, t * f + c)];
        dst[de.index(i, j, t)] = acc * inv;
      }
  return dst;
}

}  // namespace

FeaturePyramid synth_encode(const Volume3D& volume, const EncoderPreset& preset, std::uint64_t seed) {
  preset.validate();
  volume.validate();
  const std::size_t total = preset.cumulative_factor(preset.layers() - 1);
  const Extents& e = volume.extents;
  if (e.h % total || e.w % total || e.d % total)
    throw ValidationError("volume " + e.str() + " is not divisible by the cumulative downsample "
                          "factor " + std::to_string(total) + " required by preset '" +
                          preset.name + "' (every extent must be a multiple of " +
                          std::to_string(total) + ")");

  FeaturePyramid out;
  // Block means of x and x^2 over each layer's receptive box.
  std::vector<double> means = volume.voxels, squares(volume.voxels.size());
  for (std::size_t v = 0; v < squares.size(); ++v) squares[v] = volume.voxels[v] * volume.voxels[v];
  Extents cur = e;
  for (std::size_t l = 0; l < preset.layers(); ++l) {
    const std::size_t f = preset.factors[l];
    const Extents next{cur.h / f, cur.w / f, cur.d / f};
    if (f > 1) {
      means = box_average(means, cur, f, next);
      squares = box_average(squares, cur, f, next);
    }
    cur = next;

    const std::size_t C = preset.channels[l];
    std::mt19937_64 rng(mix_seed(seed, l));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> w_mean(C), w_square(C), w_var(C);
    for (std::size_t c = 0; c < C; ++c) {
      w_mean[c] = dist(rng);
      w_square[c] = dist(rng);
      w_var[c] = dist(rng);
    }
    FeatureLayer layer(cur, C);
    const std::size_t n = cur.voxels();
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < C; ++c) {
      double* dst = layer.data.data() + c * n;
      for (std::size_t v = 0; v < n; ++v) {
        const double m = means[v];
        const double var = std::max(0.0, squares[v] - m * m);
        dst[v] = w_mean[c] * m + w_square[c] * m * m + w_var[c] * var;
      }
    }
    out.layers.push_back(std::move(layer));
  }
  out.validate(&preset);
  return out;
}

std::vector<std::filesystem::path> export_pyramid(const FeaturePyramid& p,
                                                  const std::filesystem::path& dir,
                                                  const std::string& preset_name) {
  p.validate();
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  nlohmann::json manifest{{"preset", preset_name}, {"layers", nlohmann::json::array()}};
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    Container c;
    c.add("features", Tensor({L.channels, L.extents.h, L.extents.w, L.extents.d}, L.data),
          DType::f64, {{"layer", l + 1}});
    const auto name = "layer_" + std::to_string(l + 1) + ".bin";
    write_container(dir / name, c);
    paths.push_back(dir / name);
    manifest["layers"].push_back(name);
  }
  write_json_file(dir / "pyramid.json", manifest);
  return paths;
}

FeaturePyramid import_pyramid(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw ValidationError("import_pyramid: no layer files given");
  FeaturePyramid p;
  for (const auto& path : paths) {
    const Container c = read_container(path);
    const auto& r = c.records().front();
    if (r.shape.size() != 4)
      throw ValidationError("layer file '" + path.string() + "' must hold a 4-D (C,H,W,D) record, got " +
                            shape_str(r.shape));
    if (is_integer(r.dtype))
      throw ValidationError("layer file '" + path.string() + "' holds integer data");
    FeatureLayer L;
    L.channels = r.shape[0];
    L.extents = {r.shape[1], r.shape[2], r.shape[3]};
    L.data = r.reals;
    p.layers.push_back(std::move(L));
  }
  p.validate();
  return p;
}

FeaturePyramid import_pyramid_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> paths;
  if (std::filesystem::exists(dir / "pyramid.json")) {
    const auto j = read_json_file(dir / "pyramid.json", "pyramid manifest");
    for (const auto& name : j.at("layers")) paths.push_back(dir / name.get<std::string>());
  } else {
    if (!std::filesystem::is_directory(dir))
      throw ValidationError("pyramid directory '" + dir.string() + "' does not exist");
    const std::regex pat("layer_([0-9]+)\\.bin");
    std::vector<std::pair<int, std::filesystem::path>> found;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      std::smatch m;
      const std::string fname = entry.path().filename().string();
      if (std::regex_match(fname, m, pat)) found.emplace_back(std::stoi(m[1]), entry.path());
    }
    std::sort(found.begin(), found.end());
    for (auto& [_, p] : found) paths.push_back(p);
  }
  return import_pyramid(paths);
}

}  // namespace ctgraph

#include "ctgraph/volume.hpp"

#include <cmath>

#include "ctgraph/container.hpp"
#include "ctgraph/error.hpp"

namespace ctgraph {

std::string Extents::str() const {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
}

Volume3D::Volume3D(Extents e, double fill) : extents(e), voxels(e.voxels(), fill) {
  if (!e.positive()) throw DimensionError("volume extents must be positive, got " + e.str());
}

void Volume3D::validate() const {
  if (!extents.positive()) throw ValidationError("volume extents must be positive");
  if (voxels.size() != extents.voxels())
    throw ValidationError("volume " + extents.str() + " holds " + std::to_string(voxels.size()) +
                          " voxels");
  for (double v : voxels)
    if (!std::isfinite(v)) throw ValidationError("volume contains a non-finite voxel");
}

LabelMask3D::LabelMask3D(Extents e, std::int32_t k, std::int32_t fill)
    : extents(e), labels(e.voxels(), fill), num_labels(k) {
  if (!e.positive()) throw DimensionError("mask extents must be positive, got " + e.str());
}

void LabelMask3D::validate() const {
  if (!extents.positive()) throw ValidationError("mask extents must be positive");
  if (labels.size() != extents.voxels())
    throw ValidationError("mask " + extents.str() + " holds " + std::to_string(labels.size()) +
                          " labels");
  for (auto l : labels)
    if (l < 0 || l > num_labels)
      throw ValidationError("mask label " + std::to_string(l) + " outside [0, " +
                            std::to_string(num_labels) + "]");
}

std::vector<std::int64_t> LabelMask3D::histogram() const {
  std::vector<std::int64_t> h(static_cast<std::size_t>(num_labels) + 1, 0);
  for (auto l : labels) ++h[static_cast<std::size_t>(l)];
  return h;
}

namespace {

std::vector<std::size_t> nearest_map(std::size_t src, std::size_t tgt) {
  std::vector<std::size_t> m(tgt);
  const double scale = static_cast<double>(src) / static_cast<double>(tgt);
  for (std::size_t x = 0; x < tgt; ++x) {
    auto s = static_cast<std::size_t>(std::floor((static_cast<double>(x) + 0.5) * scale));
    m[x] = std::min(s, src - 1);
  }
  return m;
}

}  // namespace

LabelMask3D resize_mask_nearest(const LabelMask3D& mask, Extents target) {
  if (!target.positive())
    throw DimensionError("resize target extents must be positive, got " + target.str());
  if (target == mask.extents) return mask;
  const auto mi = nearest_map(mask.extents.h, target.h);
  const auto mj = nearest_map(mask.extents.w, target.w);
  const auto mt = nearest_map(mask.extents.d, target.d);
  LabelMask3D out(target, mask.num_labels);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < target.h; ++i)
    for (std::size_t j = 0; j < target.w; ++j) {
      const std::size_t src_row = (mi[i] * mask.extents.w + mj[j]) * mask.extents.d;
      std::int32_t* dst = out.labels.data() + target.index(i, j, 0);
      for (std::size_t t = 0; t < target.d; ++t) dst[t] = mask.labels[src_row + mt[t]];
    }
  return out;
}

void save_volume(const std::filesystem::path& path, const Volume3D& v) {
  v.validate();
  Container c;
  c.add("volume", Tensor({v.extents.h, v.extents.w, v.extents.d}, v.voxels));
  write_container(path, c);
}

namespace {

Extents extents_of(const ContainerRecord& r, const std::string& what) {
  if (r.shape.size() != 3)
    throw FormatError(what + " record must be 3-D, got " + shape_str(r.shape));
  return {r.shape[0], r.shape[1], r.shape[2]};
}

}  // namespace

Volume3D load_volume(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const auto& r = c.get("volume");
  if (is_integer(r.dtype)) throw FormatError("volume record must hold real values");
  Volume3D v;
  v.extents = extents_of(r, "volume");
  v.voxels = r.reals;
  v.validate();
  return v;
}

void save_mask(const std::filesystem::path& path, const LabelMask3D& m) {
  m.validate();
  Container c;
  c.add_integers("mask", {m.extents.h, m.extents.w, m.extents.d},
                 std::vector<std::int64_t>(m.labels.begin(), m.labels.end()), DType::i32,
                 {{"K", m.num_labels}});
  write_container(path, c);
}

LabelMask3D load_mask(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const auto& r = c.get("mask");
  if (!is_integer(r.dtype)) throw FormatError("mask record must hold integer labels");
  LabelMask3D m;
  m.extents = extents_of(r, "mask");
  m.labels.assign(r.integers.begin(), r.integers.end());
  if (!r.meta.contains("K")) throw FormatError("mask record lacks meta.K");
  m.num_labels = r.meta["K"].get<std::int32_t>();
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("mask file invalid: ") + e.what());
  }
  return m;
}

}  // namespace ctgraph

#include "ctgraph/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "ctgraph/error.hpp"

namespace ctgraph {

namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
void put(std::string& out, T v) {
  v = to_little(v);
  const auto* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <class T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return to_little(v);
}

}  // namespace

std::string to_string(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i32: return "i32";
    case DType::i64: return "i64";
    case DType::u8: return "u8";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "i32") return DType::i32;
  if (s == "i64") return DType::i64;
  if (s == "u8") return DType::u8;
  throw FormatError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i32: return 4;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

bool is_integer(DType d) { return d == DType::i32 || d == DType::i64 || d == DType::u8; }

Tensor ContainerRecord::tensor() const {
  if (is_integer(dtype)) {
    std::vector<double> v(integers.begin(), integers.end());
    return Tensor(shape, std::move(v));
  }
  return Tensor(shape, reals);
}

void Container::add(std::string name, const Tensor& t, DType dtype, nlohmann::json meta) {
  if (is_integer(dtype)) throw FormatError("Container::add expects a real dtype");
  ContainerRecord r;
  r.name = std::move(name);
  r.dtype = dtype;
  r.shape = t.shape();
  r.meta = std::move(meta);
  r.reals = t.storage();
  push(std::move(r));
}

void Container::add_integers(std::string name, Shape shape, std::vector<std::int64_t> values,
                             DType dtype, nlohmann::json meta) {
  if (!is_integer(dtype)) throw FormatError("Container::add_integers expects an integer dtype");
  if (shape_numel(shape) != values.size())
    throw FormatError("record '" + name + "': shape " + shape_str(shape) + " does not match " +
                      std::to_string(values.size()) + " values");
  ContainerRecord r;
  r.name = std::move(name);
  r.dtype = dtype;
  r.shape = std::move(shape);
  r.meta = std::move(meta);
  r.integers = std::move(values);
  push(std::move(r));
}

void Container::push(ContainerRecord r) {
  if (contains(r.name)) throw FormatError("duplicate record '" + r.name + "'");
  records_.push_back(std::move(r));
}

bool Container::contains(const std::string& name) const {
  for (const auto& r : records_)
    if (r.name == name) return true;
  return false;
}

const ContainerRecord& Container::get(const std::string& name) const {
  for (const auto& r : records_)
    if (r.name == name) return r;
  throw FormatError("container has no record '" + name + "'");
}

void write_container(const std::filesystem::path& path, const Container& c) {
  std::string out;
  for (const auto& r : c.records()) {
    nlohmann::json h;
    h["name"] = r.name;
    h["dtype"] = to_string(r.dtype);
    h["shape"] = r.shape;
    h["byte_order"] = "little";
    if (!r.meta.empty()) h["meta"] = r.meta;
    out += h.dump();
    out += '\n';
    switch (r.dtype) {
      case DType::f64:
        for (double v : r.reals) put<double>(out, v);
        break;
      case DType::f32:
        for (double v : r.reals) put<float>(out, static_cast<float>(v));
        break;
      case DType::i32:
        for (auto v : r.integers) put<std::int32_t>(out, static_cast<std::int32_t>(v));
        break;
      case DType::i64:
        for (auto v : r.integers) put<std::int64_t>(out, v);
        break;
      case DType::u8:
        for (auto v : r.integers) put<std::uint8_t>(out, static_cast<std::uint8_t>(v));
        break;
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open container '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string where = "container '" + path.string() + "'";

  Container c;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw FormatError(where + ": header line not terminated");
    nlohmann::json h;
    try {
      h = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                bytes.begin() + static_cast<std::ptrdiff_t>(eol));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": malformed header: " + e.what());
    }
    pos = eol + 1;

    ContainerRecord r;
    try {
      r.name = h.at("name").get<std::string>();
      r.dtype = parse_dtype(h.at("dtype").get<std::string>());
      r.shape = h.at("shape").get<Shape>();
      if (h.value("byte_order", std::string("little")) != "little")
        throw FormatError(where + ": only little-endian payloads are supported");
      if (h.contains("meta")) r.meta = h["meta"];
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": header missing fields: " + e.what());
    }
    for (auto e : r.shape)
      if (e == 0) throw FormatError(where + ": record '" + r.name + "' has a zero extent");
    const std::size_t n = shape_numel(r.shape);
    const std::size_t sz = dtype_size(r.dtype);
    if (n > (bytes.size() - pos) / sz)
      throw FormatError(where + ": record '" + r.name + "' truncated (needs " +
                        std::to_string(n * sz) + " bytes, " + std::to_string(bytes.size() - pos) +
                        " remain)");
    const char* p = bytes.data() + pos;
    switch (r.dtype) {
      case DType::f64:
        r.reals.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.reals[i] = get<double>(p + i * 8);
        break;
      case DType::f32:
        r.reals.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.reals[i] = get<float>(p + i * 4);
        break;
      case DType::i32:
        r.integers.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.integers[i] = get<std::int32_t>(p + i * 4);
        break;
      case DType::i64:
        r.integers.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.integers[i] = get<std::int64_t>(p + i * 8);
        break;
      case DType::u8:
        r.integers.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.integers[i] = get<std::uint8_t>(p + i);
        break;
    }
    pos += n * sz;
    c.push(std::move(r));
  }
  if (c.records().empty()) throw FormatError(where + ": no records");
  return c;
}

}  // namespace ctgraph

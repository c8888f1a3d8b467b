#pragma once

// Tensor container files.
//
// A container is a sequence of records. Each record is one line of JSON
//   {"name":..., "dtype":"f64", "shape":[...], "byte_order":"little", "meta":{...}}
// terminated by '\n', followed by product(shape) raw little-endian scalars.
// Records are read until end of file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctgraph/tensor.hpp"

namespace ctgraph {

enum class DType { f32, f64, i32, i64, u8 };

std::string to_string(DType d);
DType parse_dtype(const std::string& s);
std::size_t dtype_size(DType d);
bool is_integer(DType d);

struct ContainerRecord {
  std::string name;
  DType dtype = DType::f64;
  Shape shape;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<double> reals;           // f32 / f64 payloads
  std::vector<std::int64_t> integers;  // i32 / i64 / u8 payloads

  Tensor tensor() const;
};

class Container {
 public:
  void add(std::string name, const Tensor& t, DType dtype = DType::f64,
           nlohmann::json meta = nlohmann::json::object());
  void add_integers(std::string name, Shape shape, std::vector<std::int64_t> values,
                    DType dtype = DType::i32, nlohmann::json meta = nlohmann::json::object());

  bool contains(const std::string& name) const;
  const ContainerRecord& get(const std::string& name) const;
  const std::vector<ContainerRecord>& records() const { return records_; }
  void push(ContainerRecord r);

 private:
  std::vector<ContainerRecord> records_;
};

void write_container(const std::filesystem::path& path, const Container& c);
// Throws FormatError on malformed headers, shape/payload disagreement or truncation.
Container read_container(const std::filesystem::path& path);

}  // namespace ctgraph

#include "ctgraph/json_io.hpp"

#include <fstream>

#include "ctgraph/error.hpp"

namespace ctgraph {

nlohmann::json read_json_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + what + " '" + path.string() + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + " '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << j.dump(2) << '\n';
}

}  // namespace ctgraph

#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace ctgraph {

// Throws FormatError naming `what` and the path on open/parse failure.
nlohmann::json read_json_file(const std::filesystem::path& path, const std::string& what);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace ctgraph

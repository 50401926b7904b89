#include "psdn/json_util.hpp"

#include <filesystem>
#include <fstream>

namespace psdn {

nlohmann::ordered_json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw UsageError(path.string() + ": invalid JSON: " + e.what());
  }
}

void save_json_file(const std::filesystem::path& path,
                    const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace psdn

#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "psdn/rng.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / ("psdn_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const {
    return path_ / rel;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Byte-compares two directory trees (relative layout and file contents).
inline bool trees_identical(const std::filesystem::path& a,
                            const std::filesystem::path& b) {
  std::vector<std::filesystem::path> rel_a, rel_b;
  for (auto& e : std::filesystem::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel_a.push_back(std::filesystem::relative(e.path(), a));
  for (auto& e : std::filesystem::recursive_directory_iterator(b))
    if (e.is_regular_file()) rel_b.push_back(std::filesystem::relative(e.path(), b));
  std::sort(rel_a.begin(), rel_a.end());
  std::sort(rel_b.begin(), rel_b.end());
  if (rel_a != rel_b) return false;
  for (const auto& r : rel_a)
    if (read_bytes(a / r) != read_bytes(b / r)) return false;
  return true;
}

}  // namespace testutil

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "psdn/types.hpp"

namespace psdn {

struct ManifestEntry {
  std::string id;
  std::string speaker_id;
  int accent_label = 0;
  std::string mel_path;  // relative to the manifest's directory
  std::string bnf_path;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::string generator_config_digest;  // empty when no gen_config.json
  std::filesystem::path root;           // directory holding the manifest

  std::filesystem::path resolve(const std::string& rel) const {
    return root / rel;
  }
};

// JSON-lines, one entry per line with exactly the fields of ManifestEntry.
// Validates: unique ids, resolvable paths, sane accent labels, and that the
// train split contains at least one target-accent and one other-accent
// entry. Violations are reported with line numbers. If a gen_config.json
// sits next to the manifest, its digest is verified and recorded.
DatasetManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries);

}  // namespace psdn

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "psdn/manifest.hpp"
#include "psdn/synthgen.hpp"
#include "psdn/types.hpp"

namespace psdn {

// In-memory dataset: tensors loaded once, factors re-derived from the
// sibling gen_config.json when present (they are a pure function of the
// generator config and the utterance id).
struct LoadedDataset {
  DatasetManifest manifest;
  std::optional<Generator> generator;
  std::vector<Utterance> utterances;  // aligned with manifest.entries

  std::vector<int> train_indices, valid_indices, test_indices;
  std::vector<int> train_target, train_other;  // train split by accent group
  std::vector<int> train_speaker_pool;         // global indices (generator set)

  int num_other_accents() const {
    return generator ? generator->config().num_other_accents : fallback_k;
  }
  int fallback_k = 0;  // max accent label seen, when no generator config
};

LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace psdn

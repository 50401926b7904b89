#include "psdn/dataset.hpp"

#include <algorithm>
#include <set>

#include "psdn/errors.hpp"
#include "psdn/json_util.hpp"
#include "psdn/log.hpp"
#include "psdn/tensor_io.hpp"

namespace psdn {

LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  LoadedDataset ds;
  ds.manifest = load_manifest(manifest_path);

  const auto cfg_path = ds.manifest.root / "gen_config.json";
  if (std::filesystem::exists(cfg_path)) {
    auto doc = load_json_file(cfg_path);
    ds.generator.emplace(GeneratorConfig::from_json(doc.at("generator")));
  }

  ds.utterances.reserve(ds.manifest.entries.size());
  std::set<int> speaker_globals;
  for (std::size_t i = 0; i < ds.manifest.entries.size(); ++i) {
    const ManifestEntry& e = ds.manifest.entries[i];
    Utterance u;
    u.id = e.id;
    u.speaker_id = e.speaker_id;
    u.accent_label = e.accent_label;
    u.split = e.split;
    u.mel = read_matrix(ds.manifest.resolve(e.mel_path));
    u.bnf = read_matrix(ds.manifest.resolve(e.bnf_path));
    if (u.mel.rows() != u.bnf.rows())
      throw DataError("utterance '" + e.id +
                      "': mel and bnf frame counts differ");
    if (u.mel.cols() != kMelDim)
      throw DataError("utterance '" + e.id + "': mel must have 80 channels");
    if (u.mel.rows() < 1)
      throw DataError("utterance '" + e.id + "': empty feature matrix");

    ds.fallback_k = std::max(ds.fallback_k, e.accent_label);

    if (ds.generator) {
      int accent = 0, local = 0;
      std::uint64_t utt_seed = 0;
      if (Generator::parse_utterance_id(e.id, accent, local, utt_seed)) {
        if (accent != e.accent_label)
          throw DataError("utterance '" + e.id +
                          "': id accent does not match accent_label");
        SynthFactors f = ds.generator->derive_factors(accent, local, utt_seed);
        if (static_cast<int>(f.content_seq.size()) != u.mel.rows())
          throw DataError("utterance '" + e.id +
                          "': re-derived factors disagree with stored frame "
                          "count (wrong gen_config.json?)");
        u.factors = std::move(f);
        if (e.split == Split::kTrain)
          speaker_globals.insert(
              ds.generator->global_speaker_index(SpeakerRef{accent, local}));
      } else {
        log_debug("utterance '" + e.id + "': foreign id, no factors derived");
      }
    }

    const int idx = static_cast<int>(i);
    switch (e.split) {
      case Split::kTrain:
        ds.train_indices.push_back(idx);
        (e.accent_label == 0 ? ds.train_target : ds.train_other).push_back(idx);
        break;
      case Split::kValid: ds.valid_indices.push_back(idx); break;
      case Split::kTest: ds.test_indices.push_back(idx); break;
    }
    ds.utterances.push_back(std::move(u));
  }

  ds.train_speaker_pool.assign(speaker_globals.begin(), speaker_globals.end());
  log_info("loaded " + std::to_string(ds.utterances.size()) + " utterances (" +
           std::to_string(ds.train_indices.size()) + " train, " +
           std::to_string(ds.test_indices.size()) + " test)");
  return ds;
}

}  // namespace psdn

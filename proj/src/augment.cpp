#include "psdn/augment.hpp"

#include "psdn/errors.hpp"

namespace psdn {

std::optional<int> OracleAugmenter::own_speaker(const Utterance& utt) const {
  int accent = 0, local = 0;
  std::uint64_t seed = 0;
  if (Generator::parse_utterance_id(utt.id, accent, local, seed))
    return gen_->global_speaker_index(SpeakerRef{accent, local});
  return std::nullopt;
}

AugmentedUtterance augment_speaker(const Utterance& utt, double p_convert,
                                   Rng& rng,
                                   const TimbreAugmenter& augmenter) {
  if (p_convert < 0.0 || p_convert > 1.0)
    throw UsageError("p_convert must be in [0, 1]");

  AugmentedUtterance out;
  out.base = &utt;
  const double u = rng.uniform();
  if (u >= p_convert) return out;

  const std::optional<int> own = augmenter.own_speaker(utt);
  std::vector<int> candidates;
  candidates.reserve(augmenter.speaker_pool().size());
  for (int g : augmenter.speaker_pool())
    if (!own || g != *own) candidates.push_back(g);
  if (candidates.empty()) return out;

  const int pick = static_cast<int>(
      rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1));
  const std::uint64_t seed = rng.next();
  const int speaker = candidates[pick];
  try {
    out.mel_aug = augmenter.convert(utt, speaker, seed);
  } catch (const std::exception& e) {
    throw DataError("augmentation failed for utterance '" + utt.id +
                    "': " + e.what());
  }
  if (out.mel_aug.rows() != utt.mel.rows())
    throw DataError("augmenter changed the frame count of utterance '" +
                    utt.id + "'");
  out.was_converted = true;
  out.aug_speaker_global = speaker;
  return out;
}

}  // namespace psdn

#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "psdn/rng.hpp"
#include "psdn/synthgen.hpp"
#include "psdn/types.hpp"

namespace psdn {

// Pluggable timbre converter: changes the speaker timbre of an utterance
// while retaining content and accent. The shipped implementation is the
// generator's ground-truth swap; a real voice-conversion model would slot in
// behind the same interface.
class TimbreAugmenter {
 public:
  virtual ~TimbreAugmenter() = default;
  virtual MatF convert(const Utterance& utt, int new_speaker_global,
                       std::uint64_t seed) const = 0;
  // Candidate speakers for augmentation (global indices).
  virtual const std::vector<int>& speaker_pool() const = 0;
  // Global index of the utterance's own speaker, when known.
  virtual std::optional<int> own_speaker(const Utterance& utt) const = 0;
};

class OracleAugmenter final : public TimbreAugmenter {
 public:
  OracleAugmenter(const Generator& gen, std::vector<int> pool)
      : gen_(&gen), pool_(std::move(pool)) {}

  MatF convert(const Utterance& utt, int new_speaker_global,
               std::uint64_t seed) const override {
    return gen_->timbre_swap_seeded(utt, new_speaker_global, seed);
  }
  const std::vector<int>& speaker_pool() const override { return pool_; }
  std::optional<int> own_speaker(const Utterance& utt) const override;

 private:
  const Generator* gen_;
  std::vector<int> pool_;
};

struct AugmentedUtterance {
  const Utterance* base = nullptr;
  MatF mel_aug;  // empty when not converted; use mel() accessor
  bool was_converted = false;
  std::optional<int> aug_speaker_global;

  const MatF& mel() const { return was_converted ? mel_aug : base->mel; }
};

// With probability p_convert picks a uniformly random other speaker from the
// augmenter's pool and swaps the timbre; otherwise keeps the input mel.
// Pure function of (utt, p_convert, rng state).
AugmentedUtterance augment_speaker(const Utterance& utt, double p_convert,
                                   Rng& rng, const TimbreAugmenter& augmenter);

}  // namespace psdn

#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "psdn/manifest.hpp"
#include "psdn/types.hpp"

namespace psdn {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

// Deterministic factorized feature generator. Content is a piecewise-constant
// symbol sequence rendered through per-accent linear mixing plus a periodic
// accent trajectory; timbre is a per-speaker global channel affine. The
// target accent (id 0) is the canonical frame: identity mixing, no
// trajectory, so BNF leakage vanishes for it exactly.
struct GeneratorConfig {
  int vocab_size = 32;                       // V
  int num_other_accents = 4;                 // K
  int speakers_target = 1;                   // training speakers, accent 0
  int speakers_per_other_accent = 8;         // training speakers, accent > 0
  int heldout_speakers_target = 0;
  int heldout_speakers_per_other_accent = 1;
  IntRange frames_per_symbol{4, 8};
  IntRange utterance_frames{40, 120};
  int d_mel = kMelDim;
  int d_bnf = 256;
  double accent_strength = 0.15;   // epsilon in A_a = I + eps * M_a
  double bnf_accent_leakage = 0.5; // alpha
  double noise_sigma = 0.01;
  std::uint64_t master_seed = 7;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static GeneratorConfig from_json(const nlohmann::ordered_json& j);
};

struct SplitCounts {
  int target = 0;
  int other = 0;
};

struct DatasetCounts {
  SplitCounts train{64, 64};
  SplitCounts valid{0, 0};
  SplitCounts test{0, 16};

  nlohmann::ordered_json to_json() const;
  static DatasetCounts from_json(const nlohmann::ordered_json& j);
};

struct SpeakerRef {
  int accent_id = 0;
  int local_index = 0;
};

// Per-accent parameters derived from the master seed.
struct AccentParams {
  std::vector<double> mixing;     // [80*80] row-major, A_a
  double period = 0.0;            // prosody sine period, frames
  double phase = 0.0;
  std::vector<double> direction;  // [80] unit norm (zero for accent 0)
};

class Generator {
 public:
  explicit Generator(GeneratorConfig cfg);

  const GeneratorConfig& config() const { return cfg_; }
  const AccentParams& accent_params(int accent_id) const;
  const std::vector<double>& symbol_base(int symbol) const;  // [80]

  Timbre speaker_timbre(SpeakerRef ref) const;

  // Global speaker indexing over the train + held-out universe,
  // accent-major then local ascending.
  int speaker_universe_size() const;
  int universe_size(int accent_id) const;   // train + held-out for one accent
  int train_speakers(int accent_id) const;
  SpeakerRef speaker_from_global(int global_index) const;
  int global_speaker_index(SpeakerRef ref) const;
  bool is_train_speaker(SpeakerRef ref) const;
  std::string speaker_name(SpeakerRef ref) const;  // "a<accent>_s<local>"

  // mel[t] = gain .* (A_a e(c_t) + b_a[t]) + bias (+ sigma * eta[t]).
  MatF render_mel(const SynthFactors& factors, bool with_noise) const;
  // bnf[t] = P (e(c_t) + alpha (A_a - I) e(c_t)); no noise term.
  MatF render_bnf(const SynthFactors& factors) const;

  SynthFactors derive_factors(int accent_id, int speaker_index,
                              std::uint64_t utt_seed) const;
  Utterance sample_utterance(int accent_id, int speaker_index,
                             std::uint64_t utt_seed) const;

  // Ground-truth conversion: same content and timbre, accent replaced,
  // noise off.
  MatF oracle_convert(const Utterance& utt, int new_accent) const;

  // Ground-truth timbre swap: same content and accent, timbre replaced,
  // noise on with the given (or derived) sub-seed.
  MatF timbre_swap(const Utterance& utt, int new_speaker_global) const;
  MatF timbre_swap_seeded(const Utterance& utt, int new_speaker_global,
                          std::uint64_t noise_seed) const;

  DatasetManifest generate_dataset(const DatasetCounts& counts,
                                   const std::filesystem::path& out_dir) const;

  static std::string utterance_id(int accent_id, int speaker_index,
                                  std::uint64_t utt_seed);
  // Parses "a<accent>_s<speaker>_u<seed>".
  static bool parse_utterance_id(const std::string& id, int& accent_id,
                                 int& speaker_index, std::uint64_t& utt_seed);

 private:
  void validate_speaker(SpeakerRef ref) const;

  GeneratorConfig cfg_;
  std::vector<std::vector<double>> symbols_;   // [V][80]
  std::vector<double> bnf_proj_;               // [d_bnf*80] row-major
  std::vector<AccentParams> accents_;          // [K+1]
};

// gen_config.json document: {"generator": ..., "counts": ..., "digest": ...}.
nlohmann::ordered_json gen_config_document(const GeneratorConfig& cfg,
                                           const DatasetCounts& counts);
std::string gen_config_digest(const GeneratorConfig& cfg,
                              const DatasetCounts& counts);

}  // namespace psdn

#include "psdn/synthgen.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <map>

#include "psdn/digest.hpp"
#include "psdn/errors.hpp"
#include "psdn/json_util.hpp"
#include "psdn/log.hpp"
#include "psdn/rng.hpp"
#include "psdn/tensor_io.hpp"

namespace psdn {
namespace {

constexpr int kD = kMelDim;  // latent/mel dimensionality of the generator

IntRange range_from_json(const nlohmann::ordered_json& j,
                         const std::string& key, IntRange fallback) {
  if (!j.is_array() || j.size() != 2)
    throw UsageError("generator config: key '" + key +
                     "' must be a 2-element array");
  return IntRange{j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

void GeneratorConfig::validate() const {
  if (vocab_size < 2) throw UsageError("generator config: vocab_size must be >= 2");
  if (num_other_accents < 1)
    throw UsageError("generator config: num_other_accents must be >= 1");
  if (speakers_target < 1 || speakers_per_other_accent < 1)
    throw UsageError("generator config: speaker counts must be >= 1");
  if (heldout_speakers_target < 0 || heldout_speakers_per_other_accent < 0)
    throw UsageError("generator config: held-out speaker counts must be >= 0");
  if (frames_per_symbol.lo < 1 || frames_per_symbol.lo > frames_per_symbol.hi)
    throw UsageError("generator config: frames_per_symbol range is empty");
  if (utterance_frames.lo < frames_per_symbol.lo ||
      utterance_frames.lo > utterance_frames.hi)
    throw UsageError("generator config: utterance_frames range is empty or "
                     "shorter than one symbol run");
  if (d_mel != kMelDim)
    throw UsageError("generator config: d_mel must be 80");
  if (d_bnf < 1) throw UsageError("generator config: d_bnf must be >= 1");
  if (accent_strength <= 0.0)
    throw UsageError("generator config: accent_strength must be > 0");
  if (bnf_accent_leakage < 0.0)
    throw UsageError("generator config: bnf_accent_leakage must be >= 0");
  if (noise_sigma < 0.0)
    throw UsageError("generator config: noise_sigma must be >= 0");
}

nlohmann::ordered_json GeneratorConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["num_other_accents"] = num_other_accents;
  j["speakers_target"] = speakers_target;
  j["speakers_per_other_accent"] = speakers_per_other_accent;
  j["heldout_speakers_target"] = heldout_speakers_target;
  j["heldout_speakers_per_other_accent"] = heldout_speakers_per_other_accent;
  j["frames_per_symbol"] = {frames_per_symbol.lo, frames_per_symbol.hi};
  j["utterance_frames"] = {utterance_frames.lo, utterance_frames.hi};
  j["d_mel"] = d_mel;
  j["d_bnf"] = d_bnf;
  j["accent_strength"] = accent_strength;
  j["bnf_accent_leakage"] = bnf_accent_leakage;
  j["noise_sigma"] = noise_sigma;
  j["master_seed"] = master_seed;
  return j;
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::ordered_json& j) {
  GeneratorConfig c;
  JsonReader r(j, "generator config");
  c.vocab_size = r.get("vocab_size", c.vocab_size);
  c.num_other_accents = r.get("num_other_accents", c.num_other_accents);
  c.speakers_target = r.get("speakers_target", c.speakers_target);
  c.speakers_per_other_accent =
      r.get("speakers_per_other_accent", c.speakers_per_other_accent);
  c.heldout_speakers_target =
      r.get("heldout_speakers_target", c.heldout_speakers_target);
  c.heldout_speakers_per_other_accent = r.get(
      "heldout_speakers_per_other_accent", c.heldout_speakers_per_other_accent);
  if (r.has("frames_per_symbol"))
    c.frames_per_symbol = range_from_json(r.sub("frames_per_symbol"),
                                          "frames_per_symbol", c.frames_per_symbol);
  if (r.has("utterance_frames"))
    c.utterance_frames = range_from_json(r.sub("utterance_frames"),
                                         "utterance_frames", c.utterance_frames);
  c.d_mel = r.get("d_mel", c.d_mel);
  c.d_bnf = r.get("d_bnf", c.d_bnf);
  c.accent_strength = r.get("accent_strength", c.accent_strength);
  c.bnf_accent_leakage = r.get("bnf_accent_leakage", c.bnf_accent_leakage);
  c.noise_sigma = r.get("noise_sigma", c.noise_sigma);
  c.master_seed = r.get("master_seed", c.master_seed);
  r.finish();
  c.validate();
  return c;
}

nlohmann::ordered_json DatasetCounts::to_json() const {
  nlohmann::ordered_json j;
  j["train"] = {{"target", train.target}, {"other", train.other}};
  j["valid"] = {{"target", valid.target}, {"other", valid.other}};
  j["test"] = {{"target", test.target}, {"other", test.other}};
  return j;
}

DatasetCounts DatasetCounts::from_json(const nlohmann::ordered_json& j) {
  DatasetCounts c;
  JsonReader r(j, "dataset counts");
  auto read_split = [&](const char* key, SplitCounts fallback) {
    if (!r.has(key)) return fallback;
    JsonReader s(r.sub(key), std::string("dataset counts.") + key);
    SplitCounts out;
    out.target = s.get("target", fallback.target);
    out.other = s.get("other", fallback.other);
    s.finish();
    if (out.target < 0 || out.other < 0)
      throw UsageError("dataset counts: negative utterance count");
    return out;
  };
  c.train = read_split("train", c.train);
  c.valid = read_split("valid", c.valid);
  c.test = read_split("test", c.test);
  r.finish();
  return c;
}

Generator::Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();

  {
    Rng rng(derive_seed(cfg_.master_seed, "symbols"));
    symbols_.resize(cfg_.vocab_size);
    for (auto& e : symbols_) {
      e.resize(kD);
      for (double& v : e) v = rng.gaussian();
    }
  }
  {
    Rng rng(derive_seed(cfg_.master_seed, "bnf_proj"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(kD));
    bnf_proj_.resize(static_cast<std::size_t>(cfg_.d_bnf) * kD);
    for (double& v : bnf_proj_) v = rng.gaussian() * scale;
  }

  accents_.resize(cfg_.num_other_accents + 1);
  // Accent 0 is the canonical frame: identity mixing, no trajectory.
  accents_[0].mixing.assign(kD * kD, 0.0);
  for (int d = 0; d < kD; ++d) accents_[0].mixing[d * kD + d] = 1.0;
  accents_[0].direction.assign(kD, 0.0);

  const double scale_m = 1.0 / std::sqrt(static_cast<double>(kD));
  for (int a = 1; a <= cfg_.num_other_accents; ++a) {
    AccentParams& ap = accents_[a];
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(derive_seed(cfg_.master_seed, "accent", a, attempt));
      ap.mixing.assign(kD * kD, 0.0);
      for (int r = 0; r < kD; ++r)
        for (int c = 0; c < kD; ++c)
          ap.mixing[r * kD + c] = (r == c ? 1.0 : 0.0) +
                                  cfg_.accent_strength * rng.gaussian() * scale_m;
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          a_map(ap.mixing.data(), kD, kD);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(a_map);
      if (svd.singularValues()(kD - 1) > 0.1) {
        ap.period = rng.uniform(8.0, 20.0);
        ap.phase = rng.uniform(0.0, 2.0 * M_PI);
        ap.direction.resize(kD);
        double norm2 = 0.0;
        for (double& v : ap.direction) {
          v = rng.gaussian();
          norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : ap.direction) v *= inv;
        break;
      }
      log_debug("accent " + std::to_string(a) + ": regenerating mixing, attempt " +
                std::to_string(attempt + 1));
    }
  }
}

const AccentParams& Generator::accent_params(int accent_id) const {
  if (accent_id < 0 || accent_id > cfg_.num_other_accents)
    throw DataError("unknown accent id " + std::to_string(accent_id));
  return accents_[accent_id];
}

const std::vector<double>& Generator::symbol_base(int symbol) const {
  if (symbol < 1 || symbol > cfg_.vocab_size)
    throw DataError("symbol out of vocabulary: " + std::to_string(symbol));
  return symbols_[symbol - 1];
}

Timbre Generator::speaker_timbre(SpeakerRef ref) const {
  validate_speaker(ref);
  Rng rng(derive_seed(cfg_.master_seed, "speaker", ref.accent_id,
                      ref.local_index));
  Timbre t;
  t.gain.resize(kD);
  t.bias.resize(kD);
  for (double& g : t.gain) g = rng.uniform(0.5, 1.5);
  for (double& b : t.bias) b = rng.uniform(-0.5, 0.5);
  return t;
}

int Generator::universe_size(int accent_id) const {
  if (accent_id == 0)
    return cfg_.speakers_target + cfg_.heldout_speakers_target;
  return cfg_.speakers_per_other_accent + cfg_.heldout_speakers_per_other_accent;
}

int Generator::train_speakers(int accent_id) const {
  return accent_id == 0 ? cfg_.speakers_target : cfg_.speakers_per_other_accent;
}

int Generator::speaker_universe_size() const {
  int n = 0;
  for (int a = 0; a <= cfg_.num_other_accents; ++a) n += universe_size(a);
  return n;
}

SpeakerRef Generator::speaker_from_global(int global_index) const {
  int g = global_index;
  if (g >= 0) {
    for (int a = 0; a <= cfg_.num_other_accents; ++a) {
      if (g < universe_size(a)) return SpeakerRef{a, g};
      g -= universe_size(a);
    }
  }
  throw DataError("unknown speaker (global index " +
                  std::to_string(global_index) + ")");
}

int Generator::global_speaker_index(SpeakerRef ref) const {
  validate_speaker(ref);
  int offset = 0;
  for (int a = 0; a < ref.accent_id; ++a) offset += universe_size(a);
  return offset + ref.local_index;
}

bool Generator::is_train_speaker(SpeakerRef ref) const {
  validate_speaker(ref);
  return ref.local_index < train_speakers(ref.accent_id);
}

std::string Generator::speaker_name(SpeakerRef ref) const {
  return "a" + std::to_string(ref.accent_id) + "_s" +
         std::to_string(ref.local_index);
}

void Generator::validate_speaker(SpeakerRef ref) const {
  if (ref.accent_id < 0 || ref.accent_id > cfg_.num_other_accents)
    throw DataError("unknown accent id " + std::to_string(ref.accent_id));
  if (ref.local_index < 0 || ref.local_index >= universe_size(ref.accent_id))
    throw DataError("unknown speaker a" + std::to_string(ref.accent_id) +
                    "_s" + std::to_string(ref.local_index));
}

MatF Generator::render_mel(const SynthFactors& f, bool with_noise) const {
  const auto& ap = accent_params(f.accent_id);
  const int t_len = static_cast<int>(f.content_seq.size());
  if (t_len < 1) throw DataError("empty content sequence");
  if (static_cast<int>(f.timbre.gain.size()) != kD ||
      static_cast<int>(f.timbre.bias.size()) != kD)
    throw DataError("timbre must have 80 gain and 80 bias channels");

  MatF mel(t_len, kD);
  Rng noise(f.noise_seed);
  std::vector<double> base(kD);
  for (int t = 0; t < t_len; ++t) {
    const auto& e = symbol_base(f.content_seq[t]);
    for (int d = 0; d < kD; ++d) {
      double acc = 0.0;
      const double* row = &ap.mixing[static_cast<std::size_t>(d) * kD];
      for (int j = 0; j < kD; ++j) acc += row[j] * e[j];
      base[d] = acc;
    }
    const double wobble =
        f.accent_id == 0
            ? 0.0
            : 0.3 * std::sin(2.0 * M_PI * t / ap.period + ap.phase);
    for (int d = 0; d < kD; ++d) {
      double v = f.timbre.gain[d] * (base[d] + wobble * ap.direction[d]) +
                 f.timbre.bias[d];
      if (with_noise) v += cfg_.noise_sigma * noise.gaussian();
      mel(t, d) = static_cast<float>(v);
    }
  }
  return mel;
}

MatF Generator::render_bnf(const SynthFactors& f) const {
  const auto& ap = accent_params(f.accent_id);
  const int t_len = static_cast<int>(f.content_seq.size());
  if (t_len < 1) throw DataError("empty content sequence");

  MatF bnf(t_len, cfg_.d_bnf);
  std::vector<double> mixed(kD);
  for (int t = 0; t < t_len; ++t) {
    const auto& e = symbol_base(f.content_seq[t]);
    for (int d = 0; d < kD; ++d) {
      double acc = 0.0;
      const double* row = &ap.mixing[static_cast<std::size_t>(d) * kD];
      for (int j = 0; j < kD; ++j) acc += row[j] * e[j];
      mixed[d] = e[d] + cfg_.bnf_accent_leakage * (acc - e[d]);
    }
    for (int i = 0; i < cfg_.d_bnf; ++i) {
      double acc = 0.0;
      const double* row = &bnf_proj_[static_cast<std::size_t>(i) * kD];
      for (int j = 0; j < kD; ++j) acc += row[j] * mixed[j];
      bnf(t, i) = static_cast<float>(acc);
    }
  }
  return bnf;
}

SynthFactors Generator::derive_factors(int accent_id, int speaker_index,
                                       std::uint64_t utt_seed) const {
  SpeakerRef ref{accent_id, speaker_index};
  validate_speaker(ref);

  Rng rng(derive_seed(cfg_.master_seed, "utt", accent_id, speaker_index,
                      utt_seed));
  const int total =
      static_cast<int>(rng.uniform_int(cfg_.utterance_frames.lo,
                                       cfg_.utterance_frames.hi));
  const int lo = cfg_.frames_per_symbol.lo;
  const int hi = cfg_.frames_per_symbol.hi;

  SynthFactors f;
  f.accent_id = accent_id;
  f.content_seq.reserve(total);
  int prev = 0;
  int remaining = total;
  while (remaining > 0) {
    int run;
    if (remaining <= hi) {
      run = remaining;  // remaining >= lo by the adjustment below
    } else {
      run = static_cast<int>(rng.uniform_int(lo, hi));
      if (remaining - run < lo) run = remaining - lo;
    }
    int sym = static_cast<int>(rng.uniform_int(1, cfg_.vocab_size));
    while (sym == prev) sym = static_cast<int>(rng.uniform_int(1, cfg_.vocab_size));
    f.content_seq.insert(f.content_seq.end(), run, sym);
    prev = sym;
    remaining -= run;
  }

  f.timbre = speaker_timbre(ref);
  f.noise_seed = rng.next();
  return f;
}

Utterance Generator::sample_utterance(int accent_id, int speaker_index,
                                      std::uint64_t utt_seed) const {
  Utterance u;
  u.factors = derive_factors(accent_id, speaker_index, utt_seed);
  u.id = utterance_id(accent_id, speaker_index, utt_seed);
  u.speaker_id = speaker_name(SpeakerRef{accent_id, speaker_index});
  u.accent_label = accent_id;
  u.mel = render_mel(*u.factors, /*with_noise=*/true);
  u.bnf = render_bnf(*u.factors);
  return u;
}

MatF Generator::oracle_convert(const Utterance& utt, int new_accent) const {
  if (!utt.factors)
    throw DataError("missing factors: utterance '" + utt.id +
                    "' cannot be oracle-converted");
  if (new_accent < 0 || new_accent > cfg_.num_other_accents)
    throw DataError("unknown accent id " + std::to_string(new_accent));
  SynthFactors f = *utt.factors;
  f.accent_id = new_accent;
  return render_mel(f, /*with_noise=*/false);
}

MatF Generator::timbre_swap(const Utterance& utt, int new_speaker_global) const {
  if (!utt.factors)
    throw DataError("missing factors: utterance '" + utt.id +
                    "' cannot be timbre-swapped");
  const std::uint64_t seed = derive_seed(utt.factors->noise_seed, "swap",
                                         static_cast<std::uint64_t>(new_speaker_global));
  return timbre_swap_seeded(utt, new_speaker_global, seed);
}

MatF Generator::timbre_swap_seeded(const Utterance& utt, int new_speaker_global,
                                   std::uint64_t noise_seed) const {
  if (!utt.factors)
    throw DataError("missing factors: utterance '" + utt.id +
                    "' cannot be timbre-swapped");
  const SpeakerRef ref = speaker_from_global(new_speaker_global);
  SynthFactors f = *utt.factors;
  f.timbre = speaker_timbre(ref);
  f.noise_seed = noise_seed;
  return render_mel(f, /*with_noise=*/true);
}

std::string Generator::utterance_id(int accent_id, int speaker_index,
                                    std::uint64_t utt_seed) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "a%d_s%d_u%" PRIu64, accent_id, speaker_index,
                utt_seed);
  return buf;
}

bool Generator::parse_utterance_id(const std::string& id, int& accent_id,
                                   int& speaker_index, std::uint64_t& utt_seed) {
  int consumed = 0;
  const int n = std::sscanf(id.c_str(), "a%d_s%d_u%" SCNu64 "%n", &accent_id,
                            &speaker_index, &utt_seed, &consumed);
  return n == 3 && consumed == static_cast<int>(id.size());
}

DatasetManifest Generator::generate_dataset(
    const DatasetCounts& counts, const std::filesystem::path& out_dir) const {
  if (counts.train.target < 1 || counts.train.other < 1)
    throw DataError("train split needs at least one target-accent and one "
                    "other-accent utterance");

  struct PlanItem {
    int accent;
    int local;
    std::uint64_t ordinal;
    Split split;
  };
  std::vector<PlanItem> plan;
  std::map<std::pair<int, int>, std::uint64_t> ordinals;

  // Round-robin over the speaker pool of each group so per-speaker counts
  // differ by at most one.
  auto emit = [&](Split split, int n,
                  const std::vector<SpeakerRef>& pool) {
    if (n == 0) return;
    if (pool.empty())
      throw DataError("no speakers configured for requested " +
                      split_name(split) + " utterances");
    for (int i = 0; i < n; ++i) {
      const SpeakerRef& ref = pool[i % pool.size()];
      auto key = std::make_pair(ref.accent_id, ref.local_index);
      plan.push_back(PlanItem{ref.accent_id, ref.local_index, ordinals[key]++,
                              split});
    }
  };

  std::vector<SpeakerRef> train_target_pool, train_other_pool;
  std::vector<SpeakerRef> heldout_target_pool, heldout_other_pool;
  for (int l = 0; l < cfg_.speakers_target; ++l)
    train_target_pool.push_back({0, l});
  for (int l = 0; l < cfg_.heldout_speakers_target; ++l)
    heldout_target_pool.push_back({0, cfg_.speakers_target + l});
  for (int a = 1; a <= cfg_.num_other_accents; ++a) {
    for (int l = 0; l < cfg_.speakers_per_other_accent; ++l)
      train_other_pool.push_back({a, l});
    for (int l = 0; l < cfg_.heldout_speakers_per_other_accent; ++l)
      heldout_other_pool.push_back({a, cfg_.speakers_per_other_accent + l});
  }

  emit(Split::kTrain, counts.train.target, train_target_pool);
  emit(Split::kTrain, counts.train.other, train_other_pool);
  emit(Split::kValid, counts.valid.target, train_target_pool);
  emit(Split::kValid, counts.valid.other, train_other_pool);
  emit(Split::kTest, counts.test.target, heldout_target_pool);
  emit(Split::kTest, counts.test.other, heldout_other_pool);

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "mel", ec);
  std::filesystem::create_directories(out_dir / "bnf", ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir.string());

  std::vector<ManifestEntry> entries;
  entries.reserve(plan.size());
  for (const auto& item : plan) {
    Utterance u = sample_utterance(item.accent, item.local, item.ordinal);
    u.split = item.split;
    ManifestEntry e;
    e.id = u.id;
    e.speaker_id = u.speaker_id;
    e.accent_label = u.accent_label;
    e.mel_path = "mel/" + u.id + ".psdn";
    e.bnf_path = "bnf/" + u.id + ".psdn";
    e.split = item.split;
    write_tensor(out_dir / e.mel_path, u.mel);
    write_tensor(out_dir / e.bnf_path, u.bnf);
    entries.push_back(std::move(e));
  }

  save_manifest(out_dir / "manifest.jsonl", entries);
  save_json_file(out_dir / "gen_config.json", gen_config_document(cfg_, counts));
  log_info("generated " + std::to_string(entries.size()) + " utterances into " +
           out_dir.string());
  return load_manifest(out_dir / "manifest.jsonl");
}

nlohmann::ordered_json gen_config_document(const GeneratorConfig& cfg,
                                           const DatasetCounts& counts) {
  nlohmann::ordered_json body;
  body["generator"] = cfg.to_json();
  body["counts"] = counts.to_json();
  nlohmann::ordered_json doc = body;
  doc["digest"] = digest_hex(body.dump());
  return doc;
}

std::string gen_config_digest(const GeneratorConfig& cfg,
                              const DatasetCounts& counts) {
  nlohmann::ordered_json body;
  body["generator"] = cfg.to_json();
  body["counts"] = counts.to_json();
  return digest_hex(body.dump());
}

}  // namespace psdn

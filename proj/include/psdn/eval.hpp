#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "psdn/dataset.hpp"
#include "psdn/model.hpp"
#include "psdn/probe.hpp"

namespace psdn {

struct EvalConfig {
  std::uint64_t seed = 1;
  SeqClassifier::Config probe{32, 5, 2000, 1e-3, 32};      // representation probes
  SeqClassifier::Config reference{48, 5, 3000, 1e-3, 32};  // accentedness classifier
  double reference_min_accuracy = 0.95;
  double chance_calibration_band = 0.05;
  bool run_gates = true;
  int workers = 0;
};

// Automated stand-ins for the listening tests; `surrogate` is always true in
// the serialized report.
struct EvalReport {
  double probe_accent_accuracy_on_content = 0.0;
  double probe_chance_level = 0.0;
  double accentedness_rate = 0.0;
  double l1_to_oracle_target = 0.0;
  double l1_to_source = 0.0;
  double conversion_win_rate = 0.0;
  double timbre_gain_error = 0.0;
  std::string variant;
  std::string dataset_digest;
  int checkpoint_step = 0;
  bool surrogate = true;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::ordered_json& j);
};

void write_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report(const std::filesystem::path& path);

// Frozen-content accent probe: trains a fresh (K+1)-way probe on F_content of
// train-split utterances and reports held-out accuracy.
double probe_accent_on_content(const PsdnModel<float>& model,
                               const LoadedDataset& data,
                               const EvalConfig& cfg);

// Same probe on raw BNF (encoder bypassed): the leakage detectability gate.
double probe_accent_on_bnf(const LoadedDataset& data, const EvalConfig& cfg);

// Shuffled-label calibration: held-out accuracy of the content probe with
// destroyed labels; should sit at chance.
double probe_shuffled_calibration(const PsdnModel<float>& model,
                                  const LoadedDataset& data,
                                  const EvalConfig& cfg);

struct FidelityResult {
  double l1_to_oracle_target = 0.0;
  double l1_to_source = 0.0;
  double win_rate = 0.0;
  int utterances = 0;
};

// Oracle distances of converted held-out other-accent test utterances.
FidelityResult conversion_fidelity(const PsdnModel<float>& model,
                                   const LoadedDataset& data, int workers = 0);

// (K+1)-way accent classifier on raw mel with a validity gate on held-out
// accuracy.
struct ReferenceClassifier {
  SeqClassifier classifier;
  double heldout_accuracy = 0.0;
};
ReferenceClassifier train_reference_classifier(const LoadedDataset& data,
                                               const EvalConfig& cfg);

// Fraction of mels the reference classifier assigns to the target accent.
double accentedness_rate(const std::vector<MatF>& mels,
                         const ReferenceClassifier& ref);

struct TimbreResult {
  double gain_error = 0.0;           // mean over utterances
  std::vector<double> per_utterance;
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;
  int excluded_channels = 0;
};

// Per-channel affine regression of converted mel against the neutral
// (unit-timbre) target-accent rendering; error is the relative L2 gap of the
// recovered gain to the source speaker's true gain.
TimbreResult timbre_preservation(const PsdnModel<float>& model,
                                 const LoadedDataset& data, int workers = 0);
TimbreResult timbre_preservation_of(const std::vector<MatF>& converted,
                                    const LoadedDataset& data);

// Full report over one checkpoint; runs the surrogate validity gates first
// (throws DataError when a gate fails).
EvalReport run_eval(const PsdnModel<float>& model, int checkpoint_step,
                    const LoadedDataset& data, const EvalConfig& cfg);

// Probe-only report (the `probe` CLI subcommand).
EvalReport run_probe(const PsdnModel<float>& model, int checkpoint_step,
                     const LoadedDataset& data, const EvalConfig& cfg);

}  // namespace psdn

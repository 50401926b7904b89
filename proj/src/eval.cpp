#include "psdn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "psdn/errors.hpp"
#include "psdn/graph.hpp"
#include "psdn/json_util.hpp"
#include "psdn/log.hpp"
#include "psdn/parallel.hpp"
#include "psdn/rng.hpp"

namespace psdn {
namespace {

double l1_distance(const MatF& a, const MatF& b) {
  return (a.cast<double>() - b.cast<double>()).cwiseAbs().mean();
}

std::vector<MatF> extract_content_features(const PsdnModel<float>& model,
                                           const LoadedDataset& data,
                                           const std::vector<int>& items,
                                           int workers) {
  std::vector<MatF> feats(items.size());
  parallel_for(static_cast<int>(items.size()), workers, [&](int i) {
    ad::Graph<float> g(false);
    auto v = model.content_forward(g, g.input(data.utterances[items[i]].bnf));
    feats[i] = g.value(v);
  });
  return feats;
}

void check_class_counts(const std::vector<int>& labels, int classes) {
  std::vector<int> counts(classes, 0);
  for (int l : labels) ++counts[l];
  for (int c = 0; c < classes; ++c)
    if (counts[c] < 10)
      throw DataError("insufficient data: class " + std::to_string(c) +
                      " has " + std::to_string(counts[c]) +
                      " train utterances (< 10)");
}

double run_probe_on_features(const std::vector<MatF>& feats,
                             std::vector<int> labels, int classes,
                             const SeqClassifier::Config& probe_cfg,
                             std::uint64_t seed, int workers) {
  check_class_counts(labels, classes);
  std::vector<const MatF*> ptrs(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) ptrs[i] = &feats[i];
  auto [train_idx, heldout_idx] =
      split_train_heldout(static_cast<int>(feats.size()), seed);
  SeqClassifier probe(static_cast<int>(feats.front().cols()), classes,
                      probe_cfg, derive_seed(seed, "probe"));
  probe.fit(ptrs, labels, train_idx, workers);
  return probe.accuracy(ptrs, labels, heldout_idx);
}

std::vector<int> test_other_indices(const LoadedDataset& data) {
  std::vector<int> out;
  for (int idx : data.test_indices)
    if (!data.utterances[idx].is_target_accent()) out.push_back(idx);
  return out;
}

std::vector<MatF> convert_items(const PsdnModel<float>& model,
                                const LoadedDataset& data,
                                const std::vector<int>& items, int workers) {
  std::vector<MatF> out(items.size());
  parallel_for(static_cast<int>(items.size()), workers, [&](int i) {
    const Utterance& u = data.utterances[items[i]];
    out[i] = model.convert(u.bnf, u.mel);
  });
  return out;
}

FidelityResult fidelity_of(const std::vector<MatF>& converted,
                           const LoadedDataset& data) {
  if (!data.generator)
    throw DataError("conversion fidelity needs gen_config.json (oracle)");
  const std::vector<int> items = test_other_indices(data);
  if (items.size() != converted.size())
    throw DataError("fidelity: converted count mismatch");
  if (items.empty()) throw DataError("no other-accent test utterances");

  FidelityResult r;
  int wins = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Utterance& u = data.utterances[items[i]];
    if (!u.factors)
      throw DataError("missing factors for test utterance '" + u.id + "'");
    const MatF oracle = data.generator->oracle_convert(u, 0);
    const MatF source = data.generator->render_mel(*u.factors, false);
    const double to_oracle = l1_distance(converted[i], oracle);
    const double to_source = l1_distance(converted[i], source);
    r.l1_to_oracle_target += to_oracle;
    r.l1_to_source += to_source;
    wins += to_oracle < to_source ? 1 : 0;
  }
  r.utterances = static_cast<int>(items.size());
  r.l1_to_oracle_target /= r.utterances;
  r.l1_to_source /= r.utterances;
  r.win_rate = static_cast<double>(wins) / r.utterances;
  return r;
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["probe_accent_accuracy_on_content"] = probe_accent_accuracy_on_content;
  j["probe_chance_level"] = probe_chance_level;
  j["accentedness_rate"] = accentedness_rate;
  j["l1_to_oracle_target"] = l1_to_oracle_target;
  j["l1_to_source"] = l1_to_source;
  j["conversion_win_rate"] = conversion_win_rate;
  j["timbre_gain_error"] = timbre_gain_error;
  j["variant"] = variant;
  j["dataset_digest"] = dataset_digest;
  j["checkpoint_step"] = checkpoint_step;
  j["surrogate"] = surrogate;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::ordered_json& j) {
  EvalReport r;
  JsonReader reader(j, "eval report");
  r.probe_accent_accuracy_on_content =
      reader.require<double>("probe_accent_accuracy_on_content");
  r.probe_chance_level = reader.require<double>("probe_chance_level");
  r.accentedness_rate = reader.require<double>("accentedness_rate");
  r.l1_to_oracle_target = reader.require<double>("l1_to_oracle_target");
  r.l1_to_source = reader.require<double>("l1_to_source");
  r.conversion_win_rate = reader.require<double>("conversion_win_rate");
  r.timbre_gain_error = reader.require<double>("timbre_gain_error");
  r.variant = reader.require<std::string>("variant");
  r.dataset_digest = reader.require<std::string>("dataset_digest");
  r.checkpoint_step = reader.require<int>("checkpoint_step");
  r.surrogate = reader.require<bool>("surrogate");
  reader.finish();
  return r;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  save_json_file(path, report.to_json());
}

EvalReport read_report(const std::filesystem::path& path) {
  return EvalReport::from_json(load_json_file(path));
}

double probe_accent_on_content(const PsdnModel<float>& model,
                               const LoadedDataset& data,
                               const EvalConfig& cfg) {
  std::vector<int> labels;
  for (int idx : data.train_indices)
    labels.push_back(data.utterances[idx].accent_label);
  auto feats =
      extract_content_features(model, data, data.train_indices, cfg.workers);
  return run_probe_on_features(feats, labels, data.num_other_accents() + 1,
                               cfg.probe, cfg.seed, cfg.workers);
}

double probe_accent_on_bnf(const LoadedDataset& data, const EvalConfig& cfg) {
  std::vector<MatF> feats;
  std::vector<int> labels;
  for (int idx : data.train_indices) {
    feats.push_back(data.utterances[idx].bnf);
    labels.push_back(data.utterances[idx].accent_label);
  }
  return run_probe_on_features(feats, labels, data.num_other_accents() + 1,
                               cfg.probe, cfg.seed, cfg.workers);
}

double probe_shuffled_calibration(const PsdnModel<float>& model,
                                  const LoadedDataset& data,
                                  const EvalConfig& cfg) {
  std::vector<int> labels;
  for (int idx : data.train_indices)
    labels.push_back(data.utterances[idx].accent_label);
  Rng rng(derive_seed(cfg.seed, "label_shuffle"));
  for (std::size_t k = labels.size(); k > 1; --k)
    std::swap(labels[k - 1],
              labels[rng.uniform_int(0, static_cast<std::int64_t>(k) - 1)]);
  auto feats =
      extract_content_features(model, data, data.train_indices, cfg.workers);
  return run_probe_on_features(feats, labels, data.num_other_accents() + 1,
                               cfg.probe, derive_seed(cfg.seed, "shuffled"),
                               cfg.workers);
}

FidelityResult conversion_fidelity(const PsdnModel<float>& model,
                                   const LoadedDataset& data, int workers) {
  const std::vector<int> items = test_other_indices(data);
  return fidelity_of(convert_items(model, data, items, workers), data);
}

ReferenceClassifier train_reference_classifier(const LoadedDataset& data,
                                               const EvalConfig& cfg) {
  std::vector<const MatF*> feats;
  std::vector<int> labels;
  for (int idx : data.train_indices) {
    feats.push_back(&data.utterances[idx].mel);
    labels.push_back(data.utterances[idx].accent_label);
  }
  check_class_counts(labels, data.num_other_accents() + 1);
  auto [train_idx, heldout_idx] =
      split_train_heldout(static_cast<int>(feats.size()),
                          derive_seed(cfg.seed, "reference"));
  ReferenceClassifier ref{
      SeqClassifier(kMelDim, data.num_other_accents() + 1, cfg.reference,
                    derive_seed(cfg.seed, "reference_init")),
      0.0};
  ref.classifier.fit(feats, labels, train_idx, cfg.workers);
  ref.heldout_accuracy = ref.classifier.accuracy(feats, labels, heldout_idx);
  return ref;
}

double accentedness_rate(const std::vector<MatF>& mels,
                         const ReferenceClassifier& ref) {
  if (mels.empty()) throw DataError("accentedness rate of an empty set");
  std::vector<int> hits(mels.size(), 0);
  parallel_for(static_cast<int>(mels.size()), 0, [&](int i) {
    hits[i] = ref.classifier.predict(mels[i]) == 0 ? 1 : 0;
  });
  return std::accumulate(hits.begin(), hits.end(), 0) /
         static_cast<double>(mels.size());
}

TimbreResult timbre_preservation_of(const std::vector<MatF>& converted,
                                    const LoadedDataset& data) {
  if (!data.generator)
    throw DataError("timbre preservation needs gen_config.json (oracle)");
  const std::vector<int> items = test_other_indices(data);
  if (items.size() != converted.size())
    throw DataError("timbre preservation: converted count mismatch");
  if (items.empty()) throw DataError("no other-accent test utterances");

  TimbreResult r;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Utterance& u = data.utterances[items[i]];
    if (!u.factors)
      throw DataError("missing factors for test utterance '" + u.id + "'");
    SynthFactors neutral = *u.factors;
    neutral.accent_id = 0;
    neutral.timbre.gain.assign(kMelDim, 1.0);
    neutral.timbre.bias.assign(kMelDim, 0.0);
    const MatF ref = data.generator->render_mel(neutral, false);
    const MatF& conv = converted[i];

    double num = 0.0, den = 0.0;
    for (int c = 0; c < kMelDim; ++c) {
      const Eigen::VectorXd x = ref.col(c).cast<double>();
      const Eigen::VectorXd y = conv.col(c).cast<double>();
      const double mx = x.mean(), my = y.mean();
      const double var = (x.array() - mx).square().mean();
      if (var < 1e-8) {
        ++r.excluded_channels;
        continue;
      }
      const double cov = ((x.array() - mx) * (y.array() - my)).mean();
      const double gain_hat = cov / var;
      const double gain_true = u.factors->timbre.gain[c];
      num += (gain_hat - gain_true) * (gain_hat - gain_true);
      den += gain_true * gain_true;
    }
    r.per_utterance.push_back(den > 0 ? std::sqrt(num / den) : 0.0);
  }
  r.gain_error = std::accumulate(r.per_utterance.begin(),
                                 r.per_utterance.end(), 0.0) /
                 static_cast<double>(r.per_utterance.size());
  std::vector<double> sorted = r.per_utterance;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const std::size_t k = static_cast<std::size_t>(q * (sorted.size() - 1));
    return sorted[k];
  };
  r.q25 = quantile(0.25);
  r.q50 = quantile(0.50);
  r.q75 = quantile(0.75);
  return r;
}

TimbreResult timbre_preservation(const PsdnModel<float>& model,
                                 const LoadedDataset& data, int workers) {
  const std::vector<int> items = test_other_indices(data);
  return timbre_preservation_of(convert_items(model, data, items, workers),
                                data);
}

EvalReport run_eval(const PsdnModel<float>& model, int checkpoint_step,
                    const LoadedDataset& data, const EvalConfig& cfg) {
  EvalReport report;
  report.variant = variant_name(model.variant());
  report.dataset_digest = data.manifest.generator_config_digest;
  report.checkpoint_step = checkpoint_step;
  report.probe_chance_level = 1.0 / (data.num_other_accents() + 1);

  ReferenceClassifier ref = train_reference_classifier(data, cfg);
  log_info("reference classifier held-out accuracy: " +
           std::to_string(ref.heldout_accuracy));
  if (cfg.run_gates && ref.heldout_accuracy < cfg.reference_min_accuracy) {
    std::ostringstream msg;
    msg << "surrogate invalid: reference classifier held-out accuracy "
        << ref.heldout_accuracy << " < " << cfg.reference_min_accuracy;
    throw DataError(msg.str());
  }

  const double shuffled = probe_shuffled_calibration(model, data, cfg);
  log_info("shuffled-label probe accuracy: " + std::to_string(shuffled) +
           " (chance " + std::to_string(report.probe_chance_level) + ")");
  if (cfg.run_gates && std::abs(shuffled - report.probe_chance_level) >
                           cfg.chance_calibration_band) {
    std::ostringstream msg;
    msg << "surrogate invalid: shuffled-label probe accuracy " << shuffled
        << " deviates from chance " << report.probe_chance_level
        << " by more than " << cfg.chance_calibration_band;
    throw DataError(msg.str());
  }

  report.probe_accent_accuracy_on_content =
      probe_accent_on_content(model, data, cfg);

  const std::vector<int> items = test_other_indices(data);
  const std::vector<MatF> converted =
      convert_items(model, data, items, cfg.workers);
  const FidelityResult fid = fidelity_of(converted, data);
  report.l1_to_oracle_target = fid.l1_to_oracle_target;
  report.l1_to_source = fid.l1_to_source;
  report.conversion_win_rate = fid.win_rate;
  report.accentedness_rate = accentedness_rate(converted, ref);
  const TimbreResult timbre = timbre_preservation_of(converted, data);
  report.timbre_gain_error = timbre.gain_error;
  {
    std::ostringstream msg;
    msg << "timbre gain error quantiles: q25=" << timbre.q25
        << " q50=" << timbre.q50 << " q75=" << timbre.q75
        << " (excluded channels: " << timbre.excluded_channels << ")";
    log_info(msg.str());
  }
  return report;
}

EvalReport run_probe(const PsdnModel<float>& model, int checkpoint_step,
                     const LoadedDataset& data, const EvalConfig& cfg) {
  EvalReport report;
  report.variant = variant_name(model.variant());
  report.dataset_digest = data.manifest.generator_config_digest;
  report.checkpoint_step = checkpoint_step;
  report.probe_chance_level = 1.0 / (data.num_other_accents() + 1);

  if (cfg.run_gates) {
    const double shuffled = probe_shuffled_calibration(model, data, cfg);
    if (std::abs(shuffled - report.probe_chance_level) >
        cfg.chance_calibration_band)
      throw DataError("surrogate invalid: shuffled-label probe accuracy " +
                      std::to_string(shuffled) + " is off chance");
  }
  report.probe_accent_accuracy_on_content =
      probe_accent_on_content(model, data, cfg);
  return report;
}

}  // namespace psdn

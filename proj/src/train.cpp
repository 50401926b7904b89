#include "psdn/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "psdn/checkpoint.hpp"
#include "psdn/errors.hpp"
#include "psdn/log.hpp"
#include "psdn/parallel.hpp"

namespace psdn {

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.batch_size = 32;
  c.learning_rate = 1e-3;
  c.steps = 220000;
  c.dims = ModelDims::paper();
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw UsageError("train config: batch_size must be even and >= 2");
  if (learning_rate <= 0.0)
    throw UsageError("train config: learning_rate must be > 0");
  if (steps < 0) throw UsageError("train config: steps must be >= 0");
  if (grl_lambda < 0.0)
    throw UsageError("train config: grl_lambda must be >= 0");
  if (p_convert < 0.0 || p_convert > 1.0)
    throw UsageError("train config: p_convert must be in [0, 1]");
  if (checkpoint_every < 1)
    throw UsageError("train config: checkpoint_every must be >= 1");
  if (augmenter != "oracle" && augmenter != "none")
    throw UsageError("train config: augmenter must be 'oracle' or 'none'");
  dims.validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant_name(variant);
  j["augmentation"] = augmentation;
  j["augmenter"] = augmenter;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["steps"] = steps;
  j["grl_lambda"] = grl_lambda;
  j["p_convert"] = p_convert;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["workers"] = workers;
  j["dims"] = dims.to_json();
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  JsonReader r(j, "train config");
  if (r.has("variant"))
    c.variant = variant_from_name(r.get<std::string>("variant", "psdn"));
  c.augmentation = r.get("augmentation", c.augmentation);
  c.augmenter = r.get("augmenter", c.augmenter);
  c.batch_size = r.get("batch_size", c.batch_size);
  c.learning_rate = r.get("learning_rate", c.learning_rate);
  c.adam_beta1 = r.get("adam_beta1", c.adam_beta1);
  c.adam_beta2 = r.get("adam_beta2", c.adam_beta2);
  c.adam_eps = r.get("adam_eps", c.adam_eps);
  c.steps = r.get("steps", c.steps);
  c.grl_lambda = r.get("grl_lambda", c.grl_lambda);
  c.p_convert = r.get("p_convert", c.p_convert);
  c.seed = r.get("seed", c.seed);
  c.checkpoint_every = r.get("checkpoint_every", c.checkpoint_every);
  c.workers = r.get("workers", c.workers);
  if (r.has("dims")) c.dims = ModelDims::from_json(r.sub("dims"));
  r.finish();
  c.validate();
  return c;
}

Trainer::Trainer(const LoadedDataset& data, TrainConfig config)
    : data_(&data),
      config_(std::move(config)),
      adam_(config_.learning_rate, config_.adam_beta1, config_.adam_beta2,
            config_.adam_eps) {
  config_.validate();
  if (config_.dims.d_bnf > 0 && !data.utterances.empty() &&
      data.utterances.front().bnf.cols() != config_.dims.d_bnf)
    throw DataError("train config d_bnf=" + std::to_string(config_.dims.d_bnf) +
                    " but dataset has D_bnf=" +
                    std::to_string(data.utterances.front().bnf.cols()));

  model_ = PsdnModel<float>::build(config_.dims, config_.variant, config_.seed);
  composer_ = std::make_unique<BatchComposer>(
      data.train_target, data.train_other, config_.batch_size,
      derive_seed(config_.seed, "batches"));

  if (config_.augmentation && config_.augmenter == "oracle") {
    if (!data.generator)
      throw DataError("oracle augmenter needs gen_config.json beside the "
                      "manifest");
    if (data.train_speaker_pool.empty())
      throw DataError("oracle augmenter: empty training speaker pool");
    augmenter_ = std::make_unique<OracleAugmenter>(*data.generator,
                                                   data.train_speaker_pool);
  }
}

LossBreakdown Trainer::step() {
  const std::vector<int> batch = composer_->next();
  const int b = static_cast<int>(batch.size());

  struct ItemResult {
    std::unordered_map<const ad::Parameter<float>*, MatF> grads;
    std::vector<ad::Graph<float>::BnUpdate> bn;
    double ce = 0.0, l1_target = 0.0, l1_aux = 0.0;
    bool has_target = false, has_aux = false;
  };
  std::vector<ItemResult> results(b);

  int n_target = 0;
  for (int idx : batch) n_target += data_->utterances[idx].is_target_accent();
  const int n_aux = config_.variant == Variant::kPsdn ? b : b - n_target;

  parallel_for(b, config_.workers, [&](int slot) {
    const Utterance& utt = data_->utterances[batch[slot]];
    ItemResult& res = results[slot];

    AugmentedUtterance aug;
    aug.base = &utt;
    if (config_.augmentation && augmenter_ != nullptr) {
      Rng rng(derive_seed(config_.seed, "augment", step_, slot));
      aug = augment_speaker(utt, config_.p_convert, rng, *augmenter_);
    }

    ad::Graph<float> g(/*training=*/true);
    auto parts = model_->item_loss(g, utt.bnf, utt.mel, aug.mel(),
                                   utt.is_target_accent(), config_.grl_lambda);

    auto obj = g.scale(parts.ce, 1.0 / b);
    res.ce = g.scalar(parts.ce);
    if (parts.has_target) {
      obj = g.add(obj, g.scale(parts.l1_target, 1.0 / std::max(n_target, 1)));
      res.l1_target = g.scalar(parts.l1_target);
      res.has_target = true;
    }
    if (parts.has_aux) {
      obj = g.add(obj, g.scale(parts.l1_aux, 1.0 / std::max(n_aux, 1)));
      res.l1_aux = g.scalar(parts.l1_aux);
      res.has_aux = true;
    }
    g.backward(obj);
    res.grads = g.take_param_grads();
    res.bn = g.take_bn_updates();
  });

  // Ordered reduction: batch-slot order fixes every floating-point sum, so
  // worker count cannot change the result.
  std::unordered_map<const ad::Parameter<float>*, MatF> merged;
  LossBreakdown parts;
  std::ostringstream bad_ids;
  constexpr float kBnMomentum = 0.1f;
  for (int slot = 0; slot < b; ++slot) {
    ItemResult& res = results[slot];
    const Utterance& utt = data_->utterances[batch[slot]];
    if (!std::isfinite(res.ce) || !std::isfinite(res.l1_target) ||
        !std::isfinite(res.l1_aux))
      bad_ids << (bad_ids.tellp() > 0 ? ", " : "") << utt.id;
    parts.content_loss += res.ce / b;
    if (res.has_target) parts.accent_target_term += res.l1_target / std::max(n_target, 1);
    if (res.has_aux) parts.accent_aux_term += res.l1_aux / std::max(n_aux, 1);

    for (const auto& p : model_->store().all()) {
      auto it = res.grads.find(p.get());
      if (it == res.grads.end()) continue;
      auto [mit, fresh] = merged.try_emplace(p.get());
      if (fresh)
        mit->second = std::move(it->second);
      else
        mit->second += it->second;
    }
    for (const auto& u : res.bn) {
      u.mean_buf->value = (1.0f - kBnMomentum) * u.mean_buf->value +
                          kBnMomentum * u.batch_mean;
      u.var_buf->value =
          (1.0f - kBnMomentum) * u.var_buf->value + kBnMomentum * u.batch_var;
    }
  }
  parts.total = parts.content_loss + parts.accent_target_term +
                parts.accent_aux_term;
  if (bad_ids.tellp() > 0)
    throw NumericError("non-finite loss at step " + std::to_string(step_) +
                       "; offending batch ids: " + bad_ids.str());

  adam_.step(model_->store(), merged);
  ++step_;
  return parts;
}

void Trainer::train(const std::filesystem::path& out_dir) {
  std::ofstream curve;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_json_file(out_dir / "config.json", config_.to_json());
    curve.open(out_dir / "curve.jsonl", std::ios::trunc);
    if (!curve) throw IoError("cannot open curve log in " + out_dir.string());
  }

  for (int s = 0; s < config_.steps; ++s) {
    LossBreakdown parts = step();
    if (curve.is_open()) {
      nlohmann::ordered_json line;
      line["step"] = step_;
      line["content_loss"] = parts.content_loss;
      line["accent_target_term"] = parts.accent_target_term;
      line["accent_aux_term"] = parts.accent_aux_term;
      line["total"] = parts.total;
      curve << line.dump() << "\n";
    }
    if (step_ % 250 == 0 || step_ == config_.steps) {
      std::ostringstream msg;
      msg << "step " << step_ << "/" << config_.steps << " total=" << parts.total
          << " ce=" << parts.content_loss
          << " l1_t=" << parts.accent_target_term
          << " l1_aux=" << parts.accent_aux_term;
      log_info(msg.str());
      if (curve.is_open()) curve.flush();
    }
    if (!out_dir.empty() && step_ % config_.checkpoint_every == 0 &&
        step_ != config_.steps)
      save_checkpoint(out_dir / ("step_" + std::to_string(step_)),
                      model_->store(), config_, step_, &adam_);
  }
  if (!out_dir.empty())
    save_checkpoint(out_dir / "final", model_->store(), config_, step_, &adam_);
}

}  // namespace psdn

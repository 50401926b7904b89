#pragma once

#include <filesystem>
#include <memory>

#include "psdn/adam.hpp"
#include "psdn/augment.hpp"
#include "psdn/batching.hpp"
#include "psdn/dataset.hpp"
#include "psdn/model.hpp"

namespace psdn {

struct TrainConfig {
  Variant variant = Variant::kPsdn;
  bool augmentation = true;
  std::string augmenter = "oracle";  // {oracle, none}
  int batch_size = 16;               // desk default; 32 at paper scale
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps = 5000;                  // desk default; 220000 at paper scale
  double grl_lambda = 5e-3;
  double p_convert = 0.5;
  std::uint64_t seed = 1;
  int checkpoint_every = 1000;
  int workers = 0;                   // 0 = hardware concurrency
  ModelDims dims = ModelDims::desk();

  static TrainConfig paper_scale();

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::ordered_json& j);
};

class Trainer {
 public:
  Trainer(const LoadedDataset& data, TrainConfig config);

  // One optimization step over a composed batch; throws NumericError with
  // the offending batch ids on non-finite loss.
  LossBreakdown step();

  // Full run: curve log (JSON-lines) plus periodic and final checkpoints
  // under out_dir. Pass an empty path to skip artifacts.
  void train(const std::filesystem::path& out_dir);

  PsdnModel<float>& model() { return *model_; }
  const PsdnModel<float>& model() const { return *model_; }
  Adam<float>& optimizer() { return adam_; }
  const TrainConfig& config() const { return config_; }
  int completed_steps() const { return step_; }

 private:
  const LoadedDataset* data_;
  TrainConfig config_;
  std::unique_ptr<PsdnModel<float>> model_;
  std::unique_ptr<TimbreAugmenter> augmenter_;
  std::unique_ptr<BatchComposer> composer_;
  Adam<float> adam_;
  int step_ = 0;
};

}  // namespace psdn

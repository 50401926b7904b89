#pragma once

#include <filesystem>
#include <memory>

#include "psdn/adam.hpp"
#include "psdn/model.hpp"
#include "psdn/train.hpp"

namespace psdn {

// Checkpoint directory layout:
//   config.json            TrainConfig snapshot
//   index.json             step + parameter index (name, file, shape)
//   params/<name>.psdn     parameter and buffer tensors
//   optimizer/state.json   Adam step counter
//   optimizer/m/<name>.psdn, optimizer/v/<name>.psdn
void save_checkpoint(const std::filesystem::path& dir,
                     const ad::ParamStore<float>& store,
                     const TrainConfig& config, int step,
                     const Adam<float>* optimizer = nullptr);

struct Checkpoint {
  TrainConfig config;
  int step = 0;
  std::unique_ptr<PsdnModel<float>> model;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Restores Adam state saved next to the parameters; the store must come from
// the checkpoint's model.
void load_optimizer(const std::filesystem::path& dir, Adam<float>& optimizer,
                    const ad::ParamStore<float>& store);

}  // namespace psdn

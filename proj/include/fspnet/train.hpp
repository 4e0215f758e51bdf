#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fspnet/data.hpp"
#include "fspnet/model.hpp"
#include "fspnet/random.hpp"

namespace fspnet {

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<Parameter*>& params);
  void step(const std::vector<Parameter*>& params, double lr);
};

/// Step decay: learning_rate / lr_decay_factor^(epoch / lr_decay_epochs).
double lr_at_epoch(const ModelConfig& cfg, std::size_t epoch);

struct TrainOptions {
  bool augment = true;            // joint horizontal flip, p = 0.5
  std::size_t checkpoint_every = 50;  // epochs; 0 disables periodic saves
  std::string out_dir;            // when set, checkpoints + loss trace land here
  std::size_t max_steps = 0;      // 0: run the configured epochs
  bool verbose = false;           // per-step lines on stdout
};

struct TrainResult {
  std::vector<double> loss_trace;  // one mean batch loss per step
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
};

/// Adam over the deep-supervision objective with the step-decay schedule.
/// Aborts with DivergenceError on a non-finite loss.
TrainResult train(Model& model, const std::vector<DatasetPair>& data,
                  AdamState& adam, Rng& rng, const TrainOptions& opts);

void write_loss_trace(const std::string& path, const TrainResult& result);

// Checkpoint: binary, versioned, byte-identical across save/load/save.
void save_checkpoint(const std::string& path, Model& model,
                     const AdamState& adam, std::size_t epoch,
                     std::uint64_t rng_state);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  AdamState adam;
  std::size_t epoch = 0;
  std::uint64_t rng_state = 0;
};

/// Rebuilds the model from the stored config and restores every tensor;
/// refuses mismatched names, shapes, or formats.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fspnet

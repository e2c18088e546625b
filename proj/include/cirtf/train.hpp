#pragma once

#include <cstdint>
#include <iosfwd>

#include "cirtf/checkpoint.hpp"
#include "cirtf/data.hpp"
#include "cirtf/masking.hpp"
#include "cirtf/model.hpp"

namespace cirtf {

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-3;
  int max_epochs = 30;
  uint64_t seed = 0;
  MaskSchedule schedule;
  int l_m = 8;        // masked span length (pretrain)
  int patience = 20;  // early-stopping patience in epochs (finetune)
  int eval_every = 1;

  void validate() const;
};

struct TrainResult {
  Checkpoint best;  // parameters at the best validation epoch
  Checkpoint last;  // final state; for pretrain it carries optimizer state for resume
  double best_val = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;  // training epochs executed in total (including pre-resume ones)
};

// Masked-region validation metric: spectral loss of the original sequence
// with reconstructions spliced into the masked positions, averaged over the
// set. Masks are fixed per fingerprint (independent of epoch) at the
// schedule's starting fraction, so values are comparable across epochs.
double masked_val_loss(ParamSet<float>& params, const Dataset& ds, const TrainConfig& tcfg);

// Mean squared Euclidean position error over a labeled set, eval mode.
double loc_val_loss(ParamSet<float>& params, const Dataset& ds);

// Self-supervised stage: masked-reconstruction training with the full-sequence
// spectral loss, mask fraction following tcfg.schedule. Validation runs at
// epoch boundaries before that epoch's updates (epoch 0 = untrained model) and
// after the final epoch. Logs one JSON record per line to `log` if non-null.
// Pass `resume` (a previous result's `last` checkpoint) to continue a run;
// with identical configs the continuation is bit-identical to an
// uninterrupted run.
TrainResult pretrain(const Dataset& train, const Dataset& val, const ModelConfig& mcfg,
                     const TrainConfig& tcfg, std::ostream* log,
                     const Checkpoint* resume = nullptr);

// Supervised stage: squared-Euclidean localization loss on labeled data, no
// masking, early stopping on the validation mean with tcfg.patience. `init`
// is either restored from a pre-training checkpoint or freshly initialized
// (train-from-scratch arm).
TrainResult finetune(const ParamSet<float>& init, const Dataset& train, const Dataset& val,
                     const TrainConfig& tcfg, std::ostream* log);

}  // namespace cirtf

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gic/data.hpp"
#include "gic/model.hpp"

namespace gic {

// Adam hyperparameters and the learning-rate protocol: linear warmup into
// inverse-square-root decay, gradients clipped to a global L2 norm.
struct OptimizerConfig {
  double lr_peak = 1e-3;
  int warmup_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double clip_norm = 5.0;

  void validate() const;
};

// lr(step) = peak * min(step / warmup, sqrt(warmup / step)); steps count from 1.
double lr_schedule(const OptimizerConfig& cfg, int64_t step);

// Scales every gradient by clip/norm when the global L2 norm exceeds clip.
// Returns the pre-clip norm. clip_norm <= 0 disables clipping.
double clip_gradients(const std::vector<Parameter*>& params, double clip_norm);

// Adam with bias correction. One step() per batch: clips the gradients that
// forward/backward left in the parameters, then applies the scheduled rate.
class Adam {
 public:
  Adam(OptimizerConfig cfg, std::vector<Parameter*> params);

  double step();  // returns the learning rate it applied
  int64_t steps() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& params() const { return params_; }

  // First/second moments in params() order, for checkpointing.
  const std::vector<std::vector<double>>& moment1() const { return m_; }
  const std::vector<std::vector<double>>& moment2() const { return v_; }
  void restore(int64_t step, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  OptimizerConfig cfg_;
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_ = 0;
};

struct TrainLoopConfig {
  int epochs = 100;
  int batch_size = 8;
  bool sort_batches = true;

  void validate() const;
};

struct StepRecord {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;  // batch mean of the total loss
  int utts = 0;       // feasible utterances contributing to the step
  int skipped = 0;    // infeasible utterances in the batch
};

struct EpochMetrics {
  int64_t epoch = 0;
  double lr = 0.0;                 // rate of the epoch's last optimizer step
  double total_loss = kPosInf;     // means over feasible utterances
  double final_loss = kPosInf;
  std::vector<double> tap_losses;  // one per tap layer, earliest first
  double val_cer = 0.0;
  int skipped = 0;
  int64_t steps = 0;  // cumulative optimizer steps after this epoch
};

// Orchestrates epochs over a dataset. Every source of randomness is derived
// from the seed: parameter init by name, batch shuffling by epoch index, and
// one continuous dropout stream whose engine state is checkpointed, so a
// resumed run reproduces the uninterrupted one step for step.
class Trainer {
 public:
  Trainer(const GicConfig& model_cfg, const OptimizerConfig& opt_cfg,
          const TrainLoopConfig& loop_cfg, uint64_t seed);

  // Runs one epoch of batched updates, then greedy CER on val (or on the
  // training set when val is null). Throws NumericError on non-finite loss.
  EpochMetrics train_epoch(const Dataset& train, const Dataset* val = nullptr);

  double eval_cer(const Dataset& data);

  // Per-step records from the most recent train_epoch call.
  const std::vector<StepRecord>& step_records() const { return steps_; }

  GicModel& model() { return model_; }
  const GicModel& model() const { return model_; }
  Adam& optimizer() { return adam_; }
  int64_t epoch() const { return epoch_; }

  void save_checkpoint(const std::string& path, const Vocabulary& vocab) const;
  // Restores parameters, optimizer state, counters, and the dropout stream.
  // The checkpoint's model and optimizer configs must match this trainer's.
  Vocabulary resume(const std::string& path);

 private:
  void check_dataset(const Dataset& ds) const;

  GicConfig model_cfg_;
  TrainLoopConfig loop_;
  GicModel model_;
  Adam adam_;
  uint64_t seed_;
  std::mt19937_64 rng_;
  int64_t epoch_ = 0;
  std::vector<StepRecord> steps_;
};

// Parsed checkpoint container ("gic-ckpt"): config snapshots, parameter
// tensors, optimizer moments, counters, and the dropout engine state.
struct CheckpointData {
  GicConfig config;
  std::string optimizer_json;
  Vocabulary vocab;
  int64_t epoch = 0;
  int64_t step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, std::vector<double>>> params;
  std::vector<std::vector<double>> adam_m, adam_v;  // aligned with params
};

CheckpointData load_checkpoint(const std::string& path);

// Builds a model from the checkpoint's config and installs its parameters.
GicModel model_from_checkpoint(const CheckpointData& ckpt);

}  // namespace gic

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bhfa/encoder.hpp"
#include "bhfa/episodes.hpp"
#include "bhfa/losses.hpp"

namespace bhfa {

// Episodic optimization settings. spec.seed is the data seed (episode
// sampling); seed is the train seed (initialization, reparameterization
// noise, augmentation).
struct TrainConfig {
  int episodes = 2000;  // desk-scale default; benchmark-scale runs use 80000
  double lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  EpisodeSpec spec;
  LossConfig loss;
  int checkpoint_every = 0;  // 0 -> final checkpoint only
  std::uint64_t seed = 0;
  bool augment = false;
  std::string early_stopping = "none";  // hook only; no other policy implemented

  void validate() const;
};

struct TrainLogRecord {
  int episode = 0;
  double bhs = 0, cce = 0, rec = 0, total = 0;
  double acc = 0;
  double ms = 0;  // wall clock; excluded from determinism comparisons
};

// One canonical Adam update on a single tensor (bias-corrected moments).
// t is the 1-based step count after this update.
void adam_update(Tensor& param, Tensor& m, Tensor& v, const Tensor& grad, std::uint64_t t,
                 double lr, double beta1, double beta2, double eps);

// Forward-only pass over one episode with the given noise stream; reports the
// loss terms and query accuracy without touching parameters.
TrainLogRecord episode_loss(const EncoderModel& model, const Episode& ep, const TrainConfig& cfg,
                            NoiseSource& noise);

// Gradients of the weighted total for every parameter, in declaration order,
// without updating anything. Returns the forward record.
TrainLogRecord episode_gradients(const EncoderModel& model, const Episode& ep,
                                 const TrainConfig& cfg, NoiseSource& noise,
                                 std::vector<Tensor>& grads);

// Full pipeline on one episode: encode, aggregate prototypes from the
// support rows, score queries, reconstruct support and query batches from
// reparameterized latents, backpropagate the weighted total, and apply one
// Adam update. Throws ContractViolation naming the offending term if any
// loss term is non-finite.
TrainLogRecord train_step(EncoderModel& model, OptimizerState& opt, const Episode& ep,
                          const TrainConfig& cfg, NoiseSource& noise);

using CheckpointFn = std::function<void(int episode, const EncoderModel&, const OptimizerState&)>;

// Runs train_step over freshly sampled episodes from opt.step (resume point)
// to cfg.episodes. Episode e samples with seed derive(spec.seed, episode, e)
// and draws noise from derive(seed, noise, e), so an interrupted run resumed
// from a checkpoint is bit-identical to an uninterrupted one.
std::vector<TrainLogRecord> fit(EncoderModel& model, OptimizerState& opt,
                                const LabeledDataset& ds, const TrainConfig& cfg,
                                const CheckpointFn& on_checkpoint = {});

// CSV rows for the training log (header: episode,bhs,cce,rec,total,acc,ms).
void write_train_log_csv(const std::string& path, const std::vector<TrainLogRecord>& log);

}  // namespace bhfa

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lamino/diffusion/schedule.hpp"
#include "lamino/diffusion/unet.hpp"

namespace lamino::nn {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 2;
  int iterations = 1000;
  /// Probability of replacing both condition channels with the null condition.
  double uncond_prob = 0.1;
  /// Probability (among unmasked samples) of nulling only the fusion channel,
  /// which trains the FDK-only mode used at inference.
  double fus_drop_prob = 0.5;
  std::uint64_t rng_seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  /// Cosine decay from lr at step 1 to lr * final_lr_fraction at the last
  /// iteration; 1 keeps the rate constant.
  double final_lr_fraction = 1.0;
};

/// Learning rate used for optimizer step `step` (1-based) of cfg.iterations.
double learning_rate_at(const TrainConfig& cfg, long step);

void validate(const TrainConfig& c);

/// Paired training example: clean target x_fus and FDK condition, both rows x cols.
struct TrainingPair {
  std::vector<double> x_fus;
  std::vector<double> x_fdk;
};

struct TrainingSet {
  int rows = 0;
  int cols = 0;
  std::vector<TrainingPair> pairs;
};

void validate(const TrainingSet& s);

/// Decoupled weight-decay Adam. Parameters are kept at float precision.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, const ParameterStore& params);
  void step(ParameterStore& params, double lr);
  long steps() const { return t_; }

 private:
  double b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepStats {
  double loss = 0.0;
  int samples = 0;
  int masked = 0;
};

/// Owns optimizer state and the sampling RNG for a training run.
class Trainer {
 public:
  Trainer(DenoiserNet& net, const NoiseSchedule& sched, const TrainConfig& cfg);

  /// Draws a batch from `data`, takes one optimizer step, returns the loss
  /// measured before the update.
  StepStats step(const TrainingSet& data);

  /// Loss/gradient of an explicit batch without updating parameters.
  /// `mask_cond[i]` nulls both conditions, `drop_fus[i]` nulls only x_fus.
  double loss_and_grad(const Tensor& x0, const Tensor& x_fdk, const Tensor& x_fus, const std::vector<int>& timesteps,
                       const Tensor& eps, const std::vector<bool>& mask_cond, const std::vector<bool>& drop_fus);

  long masked_total() const { return masked_total_; }
  long sample_total() const { return sample_total_; }
  long steps_taken() const { return opt_.steps(); }
  const TrainConfig& config() const { return cfg_; }

 private:
  DenoiserNet& net_;
  const NoiseSchedule& sched_;
  TrainConfig cfg_;
  AdamW opt_;
  std::mt19937_64 rng_;
  long masked_total_ = 0;
  long sample_total_ = 0;
};

/// One gradient step on a batch drawn from `data`; convenience wrapper around Trainer.
double train_step(Trainer& trainer, const TrainingSet& data);

struct TrainLogRow {
  long step;
  double loss;
  double lr;
  double masked_fraction;
};

std::string train_log_header();
std::string train_log_row(const TrainLogRow& r);

}  // namespace lamino::nn

#pragma once

#include <filesystem>
#include <functional>

#include "neuralme/cardio_model.hpp"
#include "neuralme/dataset.hpp"
#include "neuralme/hybrid.hpp"
#include "neuralme/ode.hpp"
#include "neuralme/rng.hpp"

namespace neuralme {

struct HorizonSchedule {
  int initial = 8;   // samples
  int increment = 8; // samples added per growth step
  int cadence = 25;  // epochs between growth steps
};

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-2;
  /// Exponential decay of the learning rate over the run: the final epoch
  /// uses learning_rate * lr_final_factor. 1.0 disables the decay.
  double lr_final_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int subset_size = 3;
  HorizonSchedule horizon;
  double unfreeze_threshold = 0.5; // relative to the initial loss
  std::uint64_t rng_seed = 1;
  double solver_step = 0.0; // 0 -> (data interval)/4
  double grad_clip = 1e3;

  void validate(int n_obs, int n_samples) const;
};

TrainConfig train_config_from_json(const std::filesystem::path& path);

struct EpochRecord {
  int epoch;
  double loss;
  int horizon;
  std::vector<int> subset;
  bool frozen;
};

struct Metrics {
  Vec per_segment_mse;    // Pa^2
  double total_mse = 0.0; // Pa^2
  std::vector<EpochRecord> history;
  double seconds_per_pulse = 0.0;
  int unfreeze_epoch = -1;
  bool diverged = false;
};

struct TrainResult {
  Vec best_params;
  Metrics metrics;
};

/// Mean over (first `horizon` samples x subset channels) of the squared
/// pressure error. channel_states maps dataset columns to state indices in
/// the trajectory. When grad_states is non-null, fills dLoss/dstates.
double loss_mse_horizon(const Trajectory& pred, const Dataset& data,
                        int horizon, const std::vector<int>& subset,
                        const std::vector<int>& channel_states,
                        Mat* grad_states = nullptr);

/// Uniform k-subset of {0..n_obs-1} without replacement; deterministic
/// under a seeded rng. Returned sorted.
std::vector<int> sample_subset(Rng& rng, int n_obs, int k);

struct AdamState {
  Vec m, v;
  long t = 0;
};

/// Standard Adam update with bias correction. Frozen parameter slices stay
/// put because their gradients arrive zeroed and the moments start at zero.
void adam_step(Vec& params, const Vec& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps);

/// The training protocol: per optimizer step a fresh 3-segment subset, a
/// horizon-scheduled MSE window, a one-cycle warm-up for the initial state,
/// and the derivative ANN locked until the loss falls below the unfreeze
/// threshold. Returns best-loss parameters (also installed in the model)
/// and the full metrics record.
TrainResult train(HybridModel& m, const Dataset& data, const TrainConfig& cfg);

/// One-cycle warm-up then full-horizon simulation; per-segment and total
/// MSE over all observed segments plus wall time per simulated pulse wave.
Metrics evaluate(HybridModel& m, const Dataset& data, double solver_step = 0.0);

struct BenchEntry {
  std::string name;
  std::vector<double> seconds_per_pulse; // raw repetitions
  double median = 0.0;
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  /// reference median / first hybrid median
  double speedup = 0.0;
};

/// Median wall time per simulated pulse wave: the elastic reference at
/// tight tolerance against hybrids at the training step size. A warm-up
/// iteration runs untimed before the repetitions.
BenchReport benchmark(CardioModel& reference,
                      std::vector<std::pair<std::string, HybridModel*>> hybrids,
                      double n_cycles, double rate, int repetitions);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochRecord>& history);

/// Worker cap for parallel evaluation, from NEURALME_THREADS (>= 1).
int worker_cap();

} // namespace neuralme

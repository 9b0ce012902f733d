#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "nbploc/config.hpp"
#include "nbploc/fg_engine.hpp"
#include "nbploc/geometry.hpp"
#include "nbploc/ls_baseline.hpp"

namespace nbploc {

struct ExperimentConfig {
  Scenario scenario;
  std::vector<NoiseSpec> noise_sweep;
  EngineConfig engine;
  int n_trials = 100;
  bool run_ls = true;
  double ls_delta_alpha = 0.01;
  std::string output_dir = "out";
  std::uint64_t master_seed = 1;
  int n_threads = 0;  // 0 = hardware concurrency
  bool dump_messages = false;

  void validate() const;
};

// Loads scenario/noise/engine/harness settings from a key-value config file.
ExperimentConfig experiment_from_config(const KeyValueFile& kv);

struct IterationRmse {
  double noise_deg = 0.0;  // angular sigma of the level, degrees
  int iteration = 0;
  double rmse_p = 0.0;      // meters
  double rmse_alpha = 0.0;  // radians
  double rmse_s = 0.0;      // joint point-of-incidence error, meters
};

struct BaselineRmse {
  double noise_deg = 0.0;
  double rmse_p = 0.0;
  double rmse_alpha = 0.0;
  double rmse_s = 0.0;
};

struct TrialFlags {
  int noise_index = 0;
  int trial_index = 0;
  int degenerate_retries = 0;
  int degenerate_fallbacks = 0;
  bool ls_failed = false;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ResolvedBandwidths> bandwidths;  // one per noise level
  std::vector<IterationRmse> nbp;              // sweep size x n_iterations records
  std::vector<BaselineRmse> ls;                // sweep size records when enabled
  std::vector<TrialFlags> flagged;             // trials with recoveries or baseline failures
  std::vector<std::pair<Message, int>> message_dump;  // representative run, when requested
};

// sqrt(mean of squared Euclidean norms). Orientation errors must be wrapped
// before they are collected.
double compute_rmse(const std::vector<std::vector<double>>& errors);

// Per-trial seed, hash of (master seed, noise index, trial index).
std::uint64_t trial_seed(std::uint64_t master_seed, int noise_index, int trial_index);

// Work-stealing loop over [0, jobs); results must be written into
// pre-allocated slots keyed by the job index so the outcome is independent of
// scheduling. threads == 0 uses all hardware threads.
void parallel_for(std::size_t jobs, int threads, const std::function<void(std::size_t)>& fn);

// Runs n_trials paired NBP / LS estimates per noise level and aggregates the
// RMSE records. Deterministic under master_seed regardless of thread count.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Writes rmse_vs_iteration.csv, rmse_vs_noise.csv, run_metadata, and any
// dumped message CSVs into output_dir.
void export_report(const ExperimentReport& report, const std::string& output_dir);

// Observation stream fingerprint used to verify that the estimators consume
// identical inputs.
std::uint64_t observation_checksum(const Observations& obs);

void write_observations_csv(const Observations& obs, std::ostream& out);
Observations read_observations_csv(std::istream& in);

}  // namespace nbploc

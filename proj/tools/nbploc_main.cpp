// Command-line front end: simulate observations, run a single estimate, sweep
// a Monte Carlo experiment, or run the least-squares baseline alone.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "nbploc/fg_engine.hpp"
#include "nbploc/harness.hpp"
#include "nbploc/ls_baseline.hpp"
#include "nbploc/rng.hpp"

namespace {

using namespace nbploc;

constexpr double kDegPerRad = 180.0 / kPi;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<long long> particles;
  std::optional<int> iterations;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool paper_scale = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_experiment_flags) {
  cmd->add_option("--config", flags.config_path, "Key-value config file")->required();
  cmd->add_option("--seed", flags.seed, "Master RNG seed");
  cmd->add_option("--particles", flags.particles, "Particles per message (N_s)");
  cmd->add_option("--iterations", flags.iterations, "Belief-propagation iterations");
  cmd->add_option("--out", flags.out, "Output directory (or file for simulate)");
  if (with_experiment_flags) {
    cmd->add_option("--trials", flags.trials, "Monte Carlo trials per noise level");
    cmd->add_option("--threads", flags.threads, "Worker threads (0 = all cores)");
    cmd->add_flag("--paper-scale", flags.paper_scale,
                  "Full-scale preset: 1000 trials, 10000 particles (slow)");
  }
}

ExperimentConfig load_experiment(const CommonFlags& flags) {
  ExperimentConfig cfg = experiment_from_config(KeyValueFile::load(flags.config_path));
  if (flags.paper_scale) {
    cfg.n_trials = 1000;
    cfg.engine.n_particles = 10000;
    cfg.engine.n_iterations = 6;
    std::cerr << "note: --paper-scale runs 1000 trials with 10000 particles per message; "
                 "expect hours of runtime\n";
  }
  if (flags.seed) cfg.master_seed = *flags.seed;
  if (flags.trials) cfg.n_trials = *flags.trials;
  if (flags.particles) cfg.engine.n_particles = static_cast<std::size_t>(*flags.particles);
  if (flags.iterations) cfg.engine.n_iterations = *flags.iterations;
  if (flags.out) cfg.output_dir = *flags.out;
  if (flags.threads) cfg.n_threads = *flags.threads;
  cfg.validate();
  return cfg;
}

void print_state(std::ostream& os, const std::string& label, const StateVector& sv) {
  os << label << ": p = (" << sv.mobile.position.x << ", " << sv.mobile.position.y
     << ") m, alpha = " << sv.mobile.orientation * kDegPerRad << " deg";
  for (std::size_t j = 0; j < sv.incidence_points.size(); ++j) {
    os << ", s" << j << " = (" << sv.incidence_points[j].x << ", " << sv.incidence_points[j].y
       << ") m";
  }
  os << "\n";
}

Observations observations_for(const ExperimentConfig& cfg, const std::string& obs_path) {
  if (!obs_path.empty()) {
    std::ifstream in(obs_path);
    if (!in) throw ConfigError("cannot open observations file: " + obs_path);
    return read_observations_csv(in);
  }
  const std::uint64_t ts = trial_seed(cfg.master_seed, 0, 0);
  return sample_observations(cfg.scenario, cfg.noise_sweep[0], mix_seed(ts, 1));
}

int cmd_simulate(const CommonFlags& flags) {
  const ExperimentConfig cfg = load_experiment(flags);
  const std::uint64_t ts = trial_seed(cfg.master_seed, 0, 0);
  const Observations obs = sample_observations(cfg.scenario, cfg.noise_sweep[0], mix_seed(ts, 1));
  if (flags.out) {
    std::ofstream out(*flags.out, std::ios::binary);
    if (!out) throw ConfigError("cannot write observations to " + *flags.out);
    write_observations_csv(obs, out);
  } else {
    write_observations_csv(obs, std::cout);
  }
  return 0;
}

int cmd_estimate(const CommonFlags& flags, const std::string& obs_path, bool dump_messages) {
  ExperimentConfig cfg = load_experiment(flags);
  const Observations obs = observations_for(cfg, obs_path);

  EngineConfig ec = cfg.engine;
  ec.seed = mix_seed(trial_seed(cfg.master_seed, 0, 0), 2);

  std::vector<std::pair<Message, int>> dumped;
  MessageSink sink = [&dumped](const Message& msg, int iteration) {
    dumped.emplace_back(msg, iteration);
  };
  const RunResult result = run_nbp(obs, cfg.scenario.base_station, ec,
                                   dump_messages ? &sink : nullptr);

  for (std::size_t l = 0; l < result.trace.size(); ++l) {
    print_state(std::cout, "iter " + std::to_string(l + 1), result.trace[l]);
  }
  if (result.degenerate_retries > 0 || result.degenerate_fallbacks > 0) {
    std::cout << "degenerate-weight recoveries: " << result.degenerate_retries
              << ", uniform fallbacks: " << result.degenerate_fallbacks << "\n";
  }

  if (dump_messages) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    for (const auto& [msg, iteration] : dumped) {
      const std::string name = "msg_" + node_name(msg.from) + "_" + node_name(msg.to) + "_iter" +
                               std::to_string(iteration) + ".csv";
      std::ofstream out(fs::path(cfg.output_dir) / name, std::ios::binary);
      if (!out) throw ConfigError("cannot write message dump in " + cfg.output_dir);
      write_particles_csv(msg.content, out);
    }
    std::cout << "wrote " << dumped.size() << " message files to " << cfg.output_dir << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonFlags& flags, bool dump_messages) {
  ExperimentConfig cfg = load_experiment(flags);
  cfg.dump_messages = cfg.dump_messages || dump_messages;
  const ExperimentReport report = run_experiment(cfg);
  export_report(report, cfg.output_dir);
  std::cout << "wrote rmse_vs_iteration.csv, rmse_vs_noise.csv, run_metadata to "
            << cfg.output_dir << "\n";
  for (const IterationRmse& r : report.nbp) {
    if (r.iteration != cfg.engine.n_iterations) continue;
    std::cout << "nbp  sigma=" << r.noise_deg << " deg: rmse_p = " << r.rmse_p
              << " m, rmse_alpha = " << r.rmse_alpha * kDegPerRad
              << " deg, rmse_s = " << r.rmse_s << " m\n";
  }
  for (const BaselineRmse& r : report.ls) {
    std::cout << "ls   sigma=" << r.noise_deg << " deg: rmse_p = " << r.rmse_p
              << " m, rmse_alpha = " << r.rmse_alpha * kDegPerRad
              << " deg, rmse_s = " << r.rmse_s << " m\n";
  }
  return 0;
}

int cmd_ls(const CommonFlags& flags, const std::string& obs_path) {
  const ExperimentConfig cfg = load_experiment(flags);
  const Observations obs = observations_for(cfg, obs_path);
  const TrialGrid grid = TrialGrid::with_spacing(cfg.ls_delta_alpha);
  const StateVector sv = grid_search(obs, cfg.scenario.base_station, grid);
  std::cout << "evaluated " << grid.values.size() << " trial orientations\n";
  print_state(std::cout, "ls", sv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-based joint localization, orientation estimation, and mapping"};
  app.require_subcommand(1);

  CommonFlags sim_flags, est_flags, sweep_flags, ls_flags;
  std::string est_obs, ls_obs;
  bool est_dump = false, sweep_dump = false;

  CLI::App* sim = app.add_subcommand("simulate", "Sample observations and emit them as CSV");
  add_common(sim, sim_flags, false);

  CLI::App* est = app.add_subcommand("estimate", "Run one estimate and print the trace");
  add_common(est, est_flags, false);
  est->add_option("--obs", est_obs, "Read observations from CSV instead of sampling");
  est->add_flag("--dump-messages", est_dump, "Write per-edge message CSVs to the output dir");

  CLI::App* sweep = app.add_subcommand("sweep", "Monte Carlo experiment, write report CSVs");
  add_common(sweep, sweep_flags, true);
  sweep->add_flag("--dump-messages", sweep_dump,
                  "Also dump the messages of one representative run");

  CLI::App* ls = app.add_subcommand("ls", "Grid-search least-squares baseline only");
  add_common(ls, ls_flags, false);
  ls->add_option("--obs", ls_obs, "Read observations from CSV instead of sampling");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_flags);
    if (est->parsed()) return cmd_estimate(est_flags, est_obs, est_dump);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, sweep_dump);
    if (ls->parsed()) return cmd_ls(ls_flags, ls_obs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

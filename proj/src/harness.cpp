#include "nbploc/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "nbploc/rng.hpp"

namespace nbploc {

namespace {

constexpr double kDegPerRad = 180.0 / kPi;

double noise_level_deg(const NoiseSpec& noise) { return noise.sigma_tx[0] * kDegPerRad; }

// Broadcast a 1-element list to J entries.
std::vector<double> broadcast(std::vector<double> v, int J, const char* what) {
  if (v.size() == 1) v.assign(static_cast<std::size_t>(J), v[0]);
  if (static_cast<int>(v.size()) != J) {
    throw ConfigError(std::string(what) + ": expected 1 or J values");
  }
  return v;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void parallel_for(std::size_t jobs, int threads_requested, const std::function<void(std::size_t)>& fn) {
  unsigned n_threads = threads_requested > 0 ? static_cast<unsigned>(threads_requested)
                                             : std::thread::hardware_concurrency();
  if (n_threads == 0) n_threads = 1;
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs > 0 ? jobs : 1));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (unsigned t = 0; t < n_threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void ExperimentConfig::validate() const {
  scenario.validate();
  if (noise_sweep.empty()) throw ConfigError("noise sweep must not be empty");
  for (const NoiseSpec& noise : noise_sweep) noise.validate(scenario.num_paths());
  engine.validate();
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (!(ls_delta_alpha > 0.0) || !(ls_delta_alpha < 2.0 * kPi)) {
    throw ConfigError("ls_delta_alpha must lie in (0, 2*pi)");
  }
  if (n_threads < 0) throw ConfigError("n_threads must be >= 0");
}

ExperimentConfig experiment_from_config(const KeyValueFile& kv) {
  ExperimentConfig cfg;

  const auto q = kv.get_doubles("scenario.q");
  const auto p = kv.get_doubles("scenario.p");
  if (q.size() != 2 || p.size() != 2) throw ConfigError("scenario.q / scenario.p need two values");
  cfg.scenario.base_station = {q[0], q[1]};
  cfg.scenario.mobile.position = {p[0], p[1]};
  cfg.scenario.mobile.orientation = wrap_angle(kv.get_double("scenario.alpha_deg") / kDegPerRad);
  for (int j = 0;; ++j) {
    const std::string key = "scenario.s" + std::to_string(j);
    if (!kv.has(key)) break;
    const auto s = kv.get_doubles(key);
    if (s.size() != 2) throw ConfigError(key + " needs two values");
    cfg.scenario.incidence_points.push_back({s[0], s[1]});
  }
  cfg.scenario.validate();
  const int J = cfg.scenario.num_paths();

  const auto sigma_d = broadcast(kv.get_doubles("noise.sigma_d_m"), J, "noise.sigma_d_m");
  const auto sigma_tx = broadcast(kv.get_doubles("noise.sigma_tx_deg"), J, "noise.sigma_tx_deg");
  const auto sigma_rx = broadcast(kv.get_doubles("noise.sigma_rx_deg"), J, "noise.sigma_rx_deg");
  NoiseSpec base;
  base.sigma_d = sigma_d;
  for (int j = 0; j < J; ++j) {
    base.sigma_tx.push_back(sigma_tx[static_cast<std::size_t>(j)] / kDegPerRad);
    base.sigma_rx.push_back(sigma_rx[static_cast<std::size_t>(j)] / kDegPerRad);
  }
  base.validate(J);

  if (kv.has("sweep.sigma_angle_deg")) {
    for (double level_deg : kv.get_doubles("sweep.sigma_angle_deg")) {
      NoiseSpec level = base;
      level.sigma_tx.assign(static_cast<std::size_t>(J), level_deg / kDegPerRad);
      level.sigma_rx.assign(static_cast<std::size_t>(J), level_deg / kDegPerRad);
      level.validate(J);
      cfg.noise_sweep.push_back(std::move(level));
    }
  } else {
    cfg.noise_sweep.push_back(base);
  }

  cfg.engine.n_particles = static_cast<std::size_t>(kv.get_int_or("engine.particles", 2000));
  cfg.engine.n_iterations = static_cast<int>(kv.get_int_or("engine.iterations", 6));
  cfg.engine.incoming_subsample = static_cast<std::size_t>(kv.get_int_or("engine.subsample", 512));
  if (kv.has("engine.bandwidth_pos_m")) {
    cfg.engine.bandwidth_position = kv.get_double("engine.bandwidth_pos_m");
  }
  if (kv.has("engine.bandwidth_ori_deg")) {
    cfg.engine.bandwidth_orientation = kv.get_double("engine.bandwidth_ori_deg") / kDegPerRad;
  }
  cfg.n_trials = static_cast<int>(kv.get_int_or("trials", 100));
  cfg.master_seed = static_cast<std::uint64_t>(kv.get_int_or("seed", 1));
  cfg.n_threads = static_cast<int>(kv.get_int_or("threads", 0));
  cfg.run_ls = kv.get_bool_or("baseline.ls", true);
  cfg.ls_delta_alpha = kv.get_double_or("ls.delta_alpha_rad", 0.01);
  cfg.output_dir = kv.get_or("output_dir", "out");
  cfg.dump_messages = kv.get_bool_or("dump_messages", false);
  cfg.validate();
  return cfg;
}

double compute_rmse(const std::vector<std::vector<double>>& errors) {
  if (errors.empty()) throw std::invalid_argument("compute_rmse needs at least one error vector");
  double acc = 0.0;
  for (const auto& e : errors) {
    double sq = 0.0;
    for (double v : e) sq += v * v;
    acc += sq;
  }
  return std::sqrt(acc / static_cast<double>(errors.size()));
}

std::uint64_t trial_seed(std::uint64_t master_seed, int noise_index, int trial_index) {
  return mix_seed(master_seed, static_cast<std::uint64_t>(noise_index),
                  static_cast<std::uint64_t>(trial_index));
}

std::uint64_t observation_checksum(const Observations& obs) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the double bit patterns
  auto mix = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffULL;
      h *= 1099511628211ULL;
    }
  };
  for (const PathTriple& t : obs.triplets) {
    mix(t.d);
    mix(t.theta_tx);
    mix(t.theta_rx);
  }
  for (int j = 0; j < obs.noise.num_paths(); ++j) {
    mix(obs.noise.sigma_d[static_cast<std::size_t>(j)]);
    mix(obs.noise.sigma_tx[static_cast<std::size_t>(j)]);
    mix(obs.noise.sigma_rx[static_cast<std::size_t>(j)]);
  }
  return h;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const int L = static_cast<int>(cfg.noise_sweep.size());
  const int T = cfg.n_trials;
  const int I = cfg.engine.n_iterations;
  const int J = cfg.scenario.num_paths();
  const TrialGrid grid = TrialGrid::with_spacing(cfg.ls_delta_alpha);

  struct TrialOut {
    EstimateTrace trace;
    StateVector ls;
    bool ls_ok = false;
    int retries = 0;
    int fallbacks = 0;
  };
  std::vector<TrialOut> outs(static_cast<std::size_t>(L) * static_cast<std::size_t>(T));

  parallel_for(outs.size(), cfg.n_threads, [&](std::size_t idx) {
    const int li = static_cast<int>(idx) / T;
    const int ti = static_cast<int>(idx) % T;
    const std::uint64_t ts = trial_seed(cfg.master_seed, li, ti);
    const Observations obs = sample_observations(
        cfg.scenario, cfg.noise_sweep[static_cast<std::size_t>(li)], mix_seed(ts, 1));

    EngineConfig ec = cfg.engine;
    ec.seed = mix_seed(ts, 2);

    TrialOut& out = outs[idx];
    const std::uint64_t checksum_nbp = observation_checksum(obs);
    RunResult rr = run_nbp(obs, cfg.scenario.base_station, ec);
    out.trace = std::move(rr.trace);
    out.retries = rr.degenerate_retries;
    out.fallbacks = rr.degenerate_fallbacks;

    if (cfg.run_ls) {
      // Paired comparison: the baseline must see the identical observations.
      if (observation_checksum(obs) != checksum_nbp) {
        throw std::logic_error("observation stream changed between estimators");
      }
      try {
        out.ls = grid_search(obs, cfg.scenario.base_station, grid);
        out.ls_ok = true;
      } catch (const EstimationFailedError&) {
        out.ls_ok = false;
      }
    }
  });

  ExperimentReport report;
  report.config = cfg;
  const Pose true_pose = cfg.scenario.mobile;

  for (int li = 0; li < L; ++li) {
    const NoiseSpec& noise = cfg.noise_sweep[static_cast<std::size_t>(li)];
    report.bandwidths.push_back(resolve_bandwidths(cfg.engine, noise));
    const double level_deg = noise_level_deg(noise);

    for (int it = 0; it < I; ++it) {
      std::vector<std::vector<double>> e_p, e_alpha, e_s;
      e_p.reserve(static_cast<std::size_t>(T));
      e_alpha.reserve(static_cast<std::size_t>(T));
      e_s.reserve(static_cast<std::size_t>(T));
      for (int ti = 0; ti < T; ++ti) {
        const StateVector& sv =
            outs[static_cast<std::size_t>(li) * T + ti].trace[static_cast<std::size_t>(it)];
        e_p.push_back({sv.mobile.position.x - true_pose.position.x,
                       sv.mobile.position.y - true_pose.position.y});
        e_alpha.push_back({wrap_angle(sv.mobile.orientation - true_pose.orientation)});
        std::vector<double> es;
        es.reserve(static_cast<std::size_t>(2 * J));
        for (int j = 0; j < J; ++j) {
          const Point2 d = sv.incidence_points[static_cast<std::size_t>(j)] -
                           cfg.scenario.incidence_points[static_cast<std::size_t>(j)];
          es.push_back(d.x);
          es.push_back(d.y);
        }
        e_s.push_back(std::move(es));
      }
      report.nbp.push_back({level_deg, it + 1, compute_rmse(e_p), compute_rmse(e_alpha),
                            compute_rmse(e_s)});
    }

    if (cfg.run_ls) {
      std::vector<std::vector<double>> e_p, e_alpha, e_s;
      for (int ti = 0; ti < T; ++ti) {
        const TrialOut& out = outs[static_cast<std::size_t>(li) * T + ti];
        if (!out.ls_ok) continue;
        e_p.push_back({out.ls.mobile.position.x - true_pose.position.x,
                       out.ls.mobile.position.y - true_pose.position.y});
        e_alpha.push_back({wrap_angle(out.ls.mobile.orientation - true_pose.orientation)});
        std::vector<double> es;
        for (int j = 0; j < J; ++j) {
          const Point2 d = out.ls.incidence_points[static_cast<std::size_t>(j)] -
                           cfg.scenario.incidence_points[static_cast<std::size_t>(j)];
          es.push_back(d.x);
          es.push_back(d.y);
        }
        e_s.push_back(std::move(es));
      }
      if (e_p.empty()) throw EstimationFailedError("baseline failed for every trial of a level");
      report.ls.push_back({level_deg, compute_rmse(e_p), compute_rmse(e_alpha), compute_rmse(e_s)});
    }

    for (int ti = 0; ti < T; ++ti) {
      const TrialOut& out = outs[static_cast<std::size_t>(li) * T + ti];
      const bool ls_failed = cfg.run_ls && !out.ls_ok;
      if (out.retries > 0 || out.fallbacks > 0 || ls_failed) {
        report.flagged.push_back({li, ti, out.retries, out.fallbacks, ls_failed});
      }
    }
  }

  if (cfg.dump_messages) {
    // One representative run (first noise level, first trial's seed).
    const std::uint64_t ts = trial_seed(cfg.master_seed, 0, 0);
    const Observations obs =
        sample_observations(cfg.scenario, cfg.noise_sweep[0], mix_seed(ts, 1));
    EngineConfig ec = cfg.engine;
    ec.seed = mix_seed(ts, 2);
    MessageSink sink = [&report](const Message& msg, int iteration) {
      report.message_dump.emplace_back(msg, iteration);
    };
    run_nbp(obs, cfg.scenario.base_station, ec, &sink);
  }
  return report;
}

void export_report(const ExperimentReport& report, const std::string& output_dir) {
  report.config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory: " + output_dir);

  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(output_dir) / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + name + " in " + output_dir);
    return out;
  };

  {
    std::ofstream out = open("rmse_vs_iteration.csv");
    out << "noise_deg,iteration,rmse_p_m,rmse_alpha_rad,rmse_s_m\n";
    for (const IterationRmse& r : report.nbp) {
      out << fmt(r.noise_deg) << ',' << r.iteration << ',' << fmt(r.rmse_p) << ','
          << fmt(r.rmse_alpha) << ',' << fmt(r.rmse_s) << '\n';
    }
  }
  {
    std::ofstream out = open("rmse_vs_noise.csv");
    out << "noise_deg,estimator,rmse_p_m,rmse_alpha_rad,rmse_s_m\n";
    const int I = report.config.engine.n_iterations;
    for (const IterationRmse& r : report.nbp) {
      if (r.iteration != I) continue;
      out << fmt(r.noise_deg) << ",nbp," << fmt(r.rmse_p) << ',' << fmt(r.rmse_alpha) << ','
          << fmt(r.rmse_s) << '\n';
    }
    for (const BaselineRmse& r : report.ls) {
      out << fmt(r.noise_deg) << ",ls," << fmt(r.rmse_p) << ',' << fmt(r.rmse_alpha) << ','
          << fmt(r.rmse_s) << '\n';
    }
  }
  {
    const ExperimentConfig& cfg = report.config;
    std::ofstream out = open("run_metadata");
    out << "scenario.q = " << fmt_full(cfg.scenario.base_station.x) << ' '
        << fmt_full(cfg.scenario.base_station.y) << '\n';
    out << "scenario.p = " << fmt_full(cfg.scenario.mobile.position.x) << ' '
        << fmt_full(cfg.scenario.mobile.position.y) << '\n';
    out << "scenario.alpha_deg = " << fmt_full(cfg.scenario.mobile.orientation * kDegPerRad)
        << '\n';
    for (int j = 0; j < cfg.scenario.num_paths(); ++j) {
      const Point2 s = cfg.scenario.incidence_points[static_cast<std::size_t>(j)];
      out << "scenario.s" << j << " = " << fmt_full(s.x) << ' ' << fmt_full(s.y) << '\n';
    }
    for (std::size_t li = 0; li < cfg.noise_sweep.size(); ++li) {
      const NoiseSpec& noise = cfg.noise_sweep[li];
      out << "noise.level" << li << ".sigma_d_m =";
      for (double v : noise.sigma_d) out << ' ' << fmt_full(v);
      out << "\nnoise.level" << li << ".sigma_tx_rad =";
      for (double v : noise.sigma_tx) out << ' ' << fmt_full(v);
      out << "\nnoise.level" << li << ".sigma_rx_rad =";
      for (double v : noise.sigma_rx) out << ' ' << fmt_full(v);
      out << "\nengine.level" << li
          << ".bandwidth_pos_m = " << fmt_full(report.bandwidths[li].position) << '\n';
      out << "engine.level" << li
          << ".bandwidth_ori_rad = " << fmt_full(report.bandwidths[li].orientation) << '\n';
    }
    out << "engine.particles = " << cfg.engine.n_particles << '\n';
    out << "engine.iterations = " << cfg.engine.n_iterations << '\n';
    out << "engine.subsample = " << cfg.engine.incoming_subsample << '\n';
    out << "trials = " << cfg.n_trials << '\n';
    out << "seed = " << cfg.master_seed << '\n';
    out << "baseline.ls = " << (cfg.run_ls ? "true" : "false") << '\n';
    out << "ls.delta_alpha_rad = " << fmt_full(cfg.ls_delta_alpha) << '\n';
    out << "flagged_trials = " << report.flagged.size() << '\n';
    for (const TrialFlags& f : report.flagged) {
      out << "flag.level" << f.noise_index << ".trial" << f.trial_index
          << " = retries " << f.degenerate_retries << ", fallbacks " << f.degenerate_fallbacks
          << (f.ls_failed ? ", ls_failed" : "") << '\n';
    }
  }
  for (const auto& [msg, iteration] : report.message_dump) {
    const std::string name =
        "msg_" + node_name(msg.from) + "_" + node_name(msg.to) + "_iter" +
        std::to_string(iteration) + ".csv";
    std::ofstream out = open(name);
    write_particles_csv(msg.content, out);
  }
}

void write_observations_csv(const Observations& obs, std::ostream& out) {
  out << "j,d_m,theta_tx_rad,theta_rx_rad,sigma_d_m,sigma_tx_rad,sigma_rx_rad\n";
  for (int j = 0; j < obs.num_paths(); ++j) {
    const PathTriple& t = obs.triplets[static_cast<std::size_t>(j)];
    out << j << ',' << fmt_full(t.d) << ',' << fmt_full(t.theta_tx) << ','
        << fmt_full(t.theta_rx) << ',' << fmt_full(obs.noise.sigma_d[static_cast<std::size_t>(j)])
        << ',' << fmt_full(obs.noise.sigma_tx[static_cast<std::size_t>(j)]) << ','
        << fmt_full(obs.noise.sigma_rx[static_cast<std::size_t>(j)]) << '\n';
  }
}

Observations read_observations_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty observations CSV");
  if (line != "j,d_m,theta_tx_rad,theta_rx_rad,sigma_d_m,sigma_tx_rad,sigma_rx_rad") {
    throw std::runtime_error("unexpected observations CSV header: " + line);
  }
  Observations obs;
  int expected_j = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(row, field, ',')) values.push_back(std::stod(field));
    if (values.size() != 7) throw std::runtime_error("observations CSV row needs 7 fields");
    if (static_cast<int>(values[0]) != expected_j) {
      throw std::runtime_error("observations CSV rows must be ordered by path index");
    }
    ++expected_j;
    obs.triplets.push_back({values[1], values[2], values[3]});
    obs.noise.sigma_d.push_back(values[4]);
    obs.noise.sigma_tx.push_back(values[5]);
    obs.noise.sigma_rx.push_back(values[6]);
  }
  obs.validate();
  return obs;
}

}  // namespace nbploc

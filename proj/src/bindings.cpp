#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "nbploc/fg_engine.hpp"
#include "nbploc/geometry.hpp"
#include "nbploc/harness.hpp"
#include "nbploc/ls_baseline.hpp"
#include "nbploc/particles.hpp"

namespace py = pybind11;
using namespace nbploc;

namespace {

std::string point_repr(const Point2& p) {
  std::ostringstream os;
  os << "Point2(" << p.x << ", " << p.y << ")";
  return os.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Single-snapshot joint localization, orientation estimation, and "
            "radio-environment mapping from per-path distance/AOD/AOA observations.";

  py::register_exception<DegenerateWeightsError>(m, "DegenerateWeightsError");
  py::register_exception<DegenerateOrientationError>(m, "DegenerateOrientationError");
  py::register_exception<InsufficientPathsError>(m, "InsufficientPathsError");
  py::register_exception<SingularGeometryError>(m, "SingularGeometryError");
  py::register_exception<EstimationFailedError>(m, "EstimationFailedError");
  py::register_exception<ConfigError>(m, "ConfigError");

  py::class_<Point2>(m, "Point2")
      .def(py::init<>())
      .def(py::init<double, double>(), py::arg("x"), py::arg("y"))
      .def_readwrite("x", &Point2::x)
      .def_readwrite("y", &Point2::y)
      .def("__repr__", &point_repr);

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](Point2 position, double orientation) {
             return Pose{position, orientation};
           }),
           py::arg("position"), py::arg("orientation"))
      .def_readwrite("position", &Pose::position)
      .def_readwrite("orientation", &Pose::orientation);

  py::class_<Scenario>(m, "Scenario")
      .def(py::init<>())
      .def(py::init([](Point2 base_station, Pose mobile, std::vector<Point2> incidence_points) {
             Scenario s{base_station, mobile, std::move(incidence_points)};
             s.validate();
             return s;
           }),
           py::arg("base_station"), py::arg("mobile"), py::arg("incidence_points"))
      .def_readwrite("base_station", &Scenario::base_station)
      .def_readwrite("mobile", &Scenario::mobile)
      .def_readwrite("incidence_points", &Scenario::incidence_points)
      .def("num_paths", &Scenario::num_paths)
      .def("validate", &Scenario::validate);

  py::class_<NoiseSpec>(m, "NoiseSpec")
      .def(py::init<>())
      .def_static("uniform", &NoiseSpec::uniform, py::arg("num_paths"), py::arg("sigma_d"),
                  py::arg("sigma_tx"), py::arg("sigma_rx"))
      .def_readwrite("sigma_d", &NoiseSpec::sigma_d)
      .def_readwrite("sigma_tx", &NoiseSpec::sigma_tx)
      .def_readwrite("sigma_rx", &NoiseSpec::sigma_rx)
      .def("num_paths", &NoiseSpec::num_paths);

  py::class_<PathTriple>(m, "PathTriple")
      .def(py::init<>())
      .def(py::init([](double d, double theta_tx, double theta_rx) {
             return PathTriple{d, theta_tx, theta_rx};
           }),
           py::arg("d"), py::arg("theta_tx"), py::arg("theta_rx"))
      .def_readwrite("d", &PathTriple::d)
      .def_readwrite("theta_tx", &PathTriple::theta_tx)
      .def_readwrite("theta_rx", &PathTriple::theta_rx);

  py::class_<Observations>(m, "Observations")
      .def(py::init<>())
      .def_readwrite("triplets", &Observations::triplets)
      .def_readwrite("noise", &Observations::noise)
      .def("num_paths", &Observations::num_paths)
      .def("validate", &Observations::validate);

  py::class_<StateVector>(m, "StateVector")
      .def(py::init<>())
      .def_readwrite("mobile", &StateVector::mobile)
      .def_readwrite("incidence_points", &StateVector::incidence_points);

  m.def("wrap_angle", &wrap_angle, py::arg("x"));
  m.def("true_path_parameters", &true_path_parameters, py::arg("scenario"), py::arg("j"));
  m.def("sample_observations", &sample_observations, py::arg("scenario"), py::arg("noise"),
        py::arg("seed"));
  m.def("log_factor_distance", &log_factor_distance, py::arg("d_hat"), py::arg("p"), py::arg("q"),
        py::arg("s"), py::arg("sigma"));
  m.def("log_factor_aod", &log_factor_aod, py::arg("theta_hat"), py::arg("q"), py::arg("s"),
        py::arg("sigma"));
  m.def("log_factor_aoa", &log_factor_aoa, py::arg("theta_hat"), py::arg("p"), py::arg("s"),
        py::arg("alpha"), py::arg("sigma"));
  m.def("distance_from_toa", &distance_from_toa, py::arg("tau_s"));
  m.def("toa_from_distance", &toa_from_distance, py::arg("d_m"));

  py::class_<ParticleSet>(m, "ParticleSet")
      .def(py::init<int>(), py::arg("dim") = 2)
      .def_readwrite("dim", &ParticleSet::dim)
      .def_readwrite("samples", &ParticleSet::samples)
      .def_readwrite("weights", &ParticleSet::weights)
      .def("size", &ParticleSet::size)
      .def_static("dirac", &ParticleSet::dirac, py::arg("p"))
      .def_static("dirac_angle", &ParticleSet::dirac_angle, py::arg("theta"));

  py::class_<Kde>(m, "Kde")
      .def_readwrite("particles", &Kde::particles)
      .def_readwrite("bandwidth", &Kde::bandwidth);

  py::class_<DiskRegion>(m, "DiskRegion")
      .def(py::init([](Point2 center, double radius) { return DiskRegion{center, radius}; }),
           py::arg("center"), py::arg("radius"))
      .def_readwrite("center", &DiskRegion::center)
      .def_readwrite("radius", &DiskRegion::radius);

  py::class_<IntervalRegion>(m, "IntervalRegion")
      .def(py::init([](double lo, double hi) { return IntervalRegion{lo, hi}; }), py::arg("lo"),
           py::arg("hi"))
      .def_readwrite("lo", &IntervalRegion::lo)
      .def_readwrite("hi", &IntervalRegion::hi);

  m.def("normalize", &normalize, py::arg("weights_raw"));
  m.def("resample", &resample, py::arg("particles"), py::arg("seed"));
  m.def("resample_to", &resample_to, py::arg("particles"), py::arg("m"), py::arg("seed"));
  m.def("make_kde", &make_kde, py::arg("particles"), py::arg("bandwidth"));
  m.def("kde_density", py::overload_cast<const Kde&, Point2>(&kde_density), py::arg("kde"),
        py::arg("x"));
  m.def("kde_density_angle", &kde_density_angle, py::arg("kde"), py::arg("theta"));
  m.def("mmse_estimate", &mmse_estimate, py::arg("particles"));
  m.def("effective_sample_size", &effective_sample_size, py::arg("particles"));
  m.def(
      "sample_proposal_disk",
      [](const DiskRegion& disk, std::size_t n, std::uint64_t seed) {
        return sample_proposal(disk, n, seed);
      },
      py::arg("disk"), py::arg("n"), py::arg("seed"));
  m.def(
      "sample_proposal_interval",
      [](const IntervalRegion& interval, std::size_t n, std::uint64_t seed) {
        return sample_proposal(interval, n, seed);
      },
      py::arg("interval"), py::arg("n"), py::arg("seed"));

  py::class_<NodeRef>(m, "NodeRef")
      .def("__repr__", [](const NodeRef& n) { return "NodeRef(" + node_name(n) + ")"; })
      .def("name", [](const NodeRef& n) { return node_name(n); })
      .def("is_factor", &NodeRef::is_factor);

  py::class_<FactorGraph>(m, "FactorGraph")
      .def_readonly("num_paths", &FactorGraph::num_paths)
      .def_readonly("variable_nodes", &FactorGraph::variable_nodes)
      .def_readonly("factor_nodes", &FactorGraph::factor_nodes)
      .def_property_readonly("edges",
                             [](const FactorGraph& g) {
                               std::vector<std::pair<std::string, std::string>> out;
                               out.reserve(g.edges.size());
                               for (const auto& [f, v] : g.edges) {
                                 out.emplace_back(node_name(f), node_name(v));
                               }
                               return out;
                             })
      .def("neighbors", [](const FactorGraph& g, const NodeRef& n) { return g.neighbors(n); });

  m.def("build_graph", &build_graph, py::arg("num_paths"));

  py::class_<EngineConfig>(m, "EngineConfig")
      .def(py::init<>())
      .def_readwrite("n_particles", &EngineConfig::n_particles)
      .def_readwrite("n_iterations", &EngineConfig::n_iterations)
      .def_readwrite("bandwidth_position", &EngineConfig::bandwidth_position)
      .def_readwrite("bandwidth_orientation", &EngineConfig::bandwidth_orientation)
      .def_readwrite("incoming_subsample", &EngineConfig::incoming_subsample)
      .def_readwrite("seed", &EngineConfig::seed)
      .def_readwrite("max_degenerate_retries", &EngineConfig::max_degenerate_retries);

  py::class_<BeliefState>(m, "BeliefState")
      .def_readonly("mobile", &BeliefState::mobile)
      .def_readonly("orientation", &BeliefState::orientation)
      .def_readonly("scatterers", &BeliefState::scatterers)
      .def_readonly("base", &BeliefState::base)
      .def_readonly("iteration", &BeliefState::iteration);

  py::class_<RunResult>(m, "RunResult")
      .def_readonly("trace", &RunResult::trace)
      .def_readonly("beliefs", &RunResult::beliefs)
      .def_readonly("degenerate_retries", &RunResult::degenerate_retries)
      .def_readonly("degenerate_fallbacks", &RunResult::degenerate_fallbacks);

  m.def(
      "run_nbp",
      [](const Observations& obs, Point2 q_star, const EngineConfig& cfg) {
        return run_nbp(obs, q_star, cfg);
      },
      py::arg("obs"), py::arg("q_star"), py::arg("config"),
      py::call_guard<py::gil_scoped_release>());

  py::class_<TrialGrid>(m, "TrialGrid")
      .def_static("with_spacing", &TrialGrid::with_spacing, py::arg("delta_alpha"))
      .def_readonly("delta_alpha", &TrialGrid::delta_alpha)
      .def_readonly("values", &TrialGrid::values);

  py::class_<LsSolution>(m, "LsSolution")
      .def_readonly("p_hat", &LsSolution::p_hat)
      .def_readonly("r_hat", &LsSolution::r_hat)
      .def_readonly("alpha_trial", &LsSolution::alpha_trial)
      .def_readonly("residual_norm", &LsSolution::residual_norm)
      .def_readonly("valid", &LsSolution::valid);

  m.def("solve_trial", &solve_trial, py::arg("obs"), py::arg("q_star"), py::arg("alpha"));
  m.def("grid_search", &grid_search, py::arg("obs"), py::arg("q_star"), py::arg("grid"),
        py::call_guard<py::gil_scoped_release>());

  m.def("compute_rmse", &compute_rmse, py::arg("errors"));
  m.def("observation_checksum", &observation_checksum, py::arg("obs"));
  m.def("trial_seed", &trial_seed, py::arg("master_seed"), py::arg("noise_index"),
        py::arg("trial_index"));
}
